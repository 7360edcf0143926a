#include "attsteer/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attsteer/init.hpp"
#include "attsteer/rng.hpp"

namespace attsteer {

PenaltyForm parse_penalty_form(const std::string& text) {
  if (text == "squared") return PenaltyForm::squared;
  if (text == "literal") return PenaltyForm::literal;
  throw std::invalid_argument("unknown penalty form '" + text + "' (expected squared|literal)");
}

std::string to_string(PenaltyForm form) {
  return form == PenaltyForm::squared ? "squared" : "literal";
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (window == 0) throw std::invalid_argument("window length T must be >= 1");
}

double attention_penalty(const std::vector<std::vector<double>>& alpha, PenaltyForm form) {
  if (alpha.empty()) return 0.0;
  const std::size_t L = alpha.front().size();
  std::vector<double> mass(L, 0.0);
  for (const auto& row : alpha) {
    if (row.size() != L) throw ShapeError("attention rows differ in length");
    for (std::size_t i = 0; i < L; ++i) mass[i] += row[i];
  }
  double p = 0.0;
  for (double m : mass) p += form == PenaltyForm::squared ? (1.0 - m) * (1.0 - m) : 1.0 - m;
  return p;
}

double window_loss(std::span<const double> u, std::span<const double> u_hat,
                   const std::vector<std::vector<double>>& alpha, const LossConfig& config) {
  config.validate();
  if (u.size() != u_hat.size() || u.size() != alpha.size()) {
    throw ShapeError("loss inputs differ in length: u " + std::to_string(u.size()) + ", u_hat " +
                     std::to_string(u_hat.size()) + ", alpha " + std::to_string(alpha.size()));
  }
  double l1 = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t) l1 += std::abs(u[t] - u_hat[t]);
  return l1 + config.lambda * attention_penalty(alpha, config.penalty);
}

template <typename T>
Var<T> window_loss(const std::vector<Var<T>>& u_hat, const std::vector<Var<T>>& alpha,
                   const BasicTensor<T>& targets, const LossConfig& config) {
  config.validate();
  if (u_hat.empty() || u_hat.size() != alpha.size() || targets.rank() != 2 ||
      targets.dim(1) != u_hat.size()) {
    throw ShapeError("window_loss: " + std::to_string(u_hat.size()) + " predictions, " +
                     std::to_string(alpha.size()) + " attention rows, targets " +
                     to_string(targets.shape()));
  }
  Tape<T>& tape = *u_hat.front().tape;
  const std::size_t B = targets.dim(0);
  auto pred = concat<T>(u_hat, 1);
  auto total = sum_all(abs(pred - tape.constant(targets)));
  if (config.lambda != 0.0) {
    Var<T> mass = alpha.front();
    for (std::size_t t = 1; t < alpha.size(); ++t) mass = mass + alpha[t];
    auto gap = tape.constant(BasicTensor<T>(mass.shape(), T(1))) - mass;
    auto penalty = config.penalty == PenaltyForm::squared ? sum_all(gap * gap) : sum_all(gap);
    total = total + scale(penalty, static_cast<T>(config.lambda));
  }
  return scale(total, T(1) / static_cast<T>(B));
}

void adam_step(Params& params, const Params& grads, AdamState& state) {
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("gradient for unknown parameter '" + name + "'");
    Tensor& p = it->second;
    if (p.shape() != g.shape()) {
      throw ShapeError("adam: parameter '" + name + "' is " + to_string(p.shape()) +
                       " but gradient is " + to_string(g.shape()));
    }
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

double clip_global_norm(Params& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (float v : g.values()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& [name, g] : grads) {
      for (float& v : g.values()) v *= s;
    }
  }
  return norm;
}

template <typename T>
BasicParams<T> named_gradients(const ParamVars<T>& vars, const Gradients<T>& grads) {
  BasicParams<T> out;
  for (const auto& [name, var] : vars) {
    auto it = grads.find(var.id);
    if (it != grads.end()) out.emplace(name, it->second);
  }
  return out;
}

std::vector<std::size_t> valid_window_starts(std::span<const ProcessedFrame> frames, std::size_t T) {
  if (T == 0) throw std::invalid_argument("window length must be >= 1");
  std::vector<std::size_t> starts;
  std::size_t run = 0;  // consecutive frames ending at i
  for (std::size_t i = 0; i < frames.size(); ++i) {
    run = (i > 0 && frames[i].index == frames[i - 1].index + 1) ? run + 1 : 1;
    if (run >= T) starts.push_back(i + 1 - T);
  }
  return starts;
}

std::vector<std::size_t> sample_windows(std::span<const ProcessedFrame> frames, std::size_t batch,
                                        std::size_t T, std::uint64_t seed) {
  const auto starts = valid_window_starts(frames, T);
  if (starts.empty()) {
    throw std::invalid_argument("no window of " + std::to_string(T) +
                                " consecutive retained frames in a dataset of " +
                                std::to_string(frames.size()) + " frames");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  std::vector<std::size_t> out(batch);
  for (auto& s : out) s = starts[pick(rng)];
  return out;
}

namespace {

double theta_error(double u_hat, const ProcessedFrame& f, const VehicleParams& vehicle) {
  return std::abs(theta_from_u(u_hat, f.v_hat, vehicle) - f.theta_hat);
}

Params with_prefix(const Params& params, std::string_view prefix) {
  Params out;
  for (const auto& [name, t] : params) {
    if (name.starts_with(prefix)) out.emplace(name, t);
  }
  return out;
}

// Packs the given frames into one [N, H, W, C] tensor.
Tensor stack_frames(std::span<const ProcessedFrame> frames, const std::vector<std::size_t>& ids,
                    const EncoderConfig& enc) {
  const Shape one{enc.input_height, enc.input_width, enc.input_channels};
  const std::size_t per = element_count(one);
  Tensor batch(Shape{ids.size(), enc.input_height, enc.input_width, enc.input_channels});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Tensor& px = frames[ids[k]].pixels;
    if (px.shape() != one) {
      throw ShapeError("frame shape " + to_string(px.shape()) + " does not match encoder input " +
                       to_string(one));
    }
    std::copy(px.data(), px.data() + per, batch.data() + k * per);
  }
  return batch;
}

std::string head_weight(std::size_t i) { return "pretrain.fc" + std::to_string(i) + ".w"; }
std::string head_bias(std::size_t i) { return "pretrain.fc" + std::to_string(i) + ".b"; }

}  // namespace

PretrainResult pretrain_cnn(std::span<const ProcessedFrame> frames, const EncoderConfig& encoder,
                            const PretrainConfig& config, const VehicleParams& vehicle,
                            std::uint64_t seed) {
  if (frames.empty()) throw std::invalid_argument("pretraining needs frames");
  PretrainResult result;
  result.encoder = init_encoder_params(encoder, derive_seed(seed, 1));
  std::vector<std::size_t> widths{encoder.locations() * encoder.depth()};
  widths.insert(widths.end(), config.head.begin(), config.head.end());
  widths.push_back(1);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    result.head.emplace(head_weight(i),
                        xavier_init(Shape{widths[i], widths[i + 1]}, derive_seed(seed, 3, i)));
    result.head.emplace(head_bias(i), Tensor(Shape{widths[i + 1]}));
  }
  Params params = result.encoder;
  params.insert(result.head.begin(), result.head.end());
  AdamState adam{AdamConfig{config.lr}, {}, {}, 0};

  Rng rng = make_rng(seed, 6);
  std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
  for (std::size_t s = 1; s <= config.steps; ++s) {
    std::vector<std::size_t> ids(config.batch);
    for (auto& id : ids) id = pick(rng);
    Tape<float> tape;
    auto vars = bind_params(tape, params, true);
    auto x = encode(tape.constant(stack_frames(frames, ids, encoder)), vars, encoder);
    x = reshape(x, Shape{ids.size(), widths.front()});
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      x = matmul(x, param(vars, head_weight(i))) + param(vars, head_bias(i));
      if (i + 2 < widths.size()) x = relu(x);
    }
    Tensor targets(Shape{ids.size(), 1});
    for (std::size_t k = 0; k < ids.size(); ++k) targets[k] = static_cast<float>(frames[ids[k]].u);
    auto loss = scale(sum_all(abs(x - tape.constant(targets))), 1.0f / static_cast<float>(ids.size()));
    auto grads = named_gradients(vars, backward(tape, Tensor(Shape{1}, 1.0f)));
    clip_global_norm(grads, 5.0);
    adam_step(params, grads, adam);

    double mae = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k) mae += theta_error(x.value()[k], frames[ids[k]], vehicle);
    result.metrics.push_back({s, loss.value()[0], mae / static_cast<double>(ids.size())});
  }
  for (auto& [name, t] : result.encoder) t = params.at(name);
  for (auto& [name, t] : result.head) t = params.at(name);
  return result;
}

TrainResult train(std::span<const ProcessedFrame> frames, const ModelConfig& model,
                  const TrainConfig& config, const VehicleParams& vehicle,
                  const MetricCallback& on_metric) {
  model.validate();
  config.loss.validate();
  const std::size_t T = config.loss.window, B = config.batch;
  const std::size_t L = model.encoder.locations(), D = model.encoder.depth();
  if (B == 0) throw std::invalid_argument("batch must be >= 1");
  sample_windows(frames, 1, T, config.seed);  // fails early when no window fits

  TrainResult result;
  Params params = init_model_params(model, config.seed);
  if (config.pretrain.enabled) {
    auto pre = pretrain_cnn(frames, model.encoder, config.pretrain, vehicle, config.seed);
    for (const auto& [name, t] : pre.encoder) params.at(name) = t;
    result.pretrain_metrics = std::move(pre.metrics);
  }

  // Cached per-frame [L*D] features when the encoder is frozen.
  std::vector<float> cache;
  if (config.freeze_encoder) {
    cache.resize(frames.size() * L * D);
    const Params enc = with_prefix(params, "encoder.");
    constexpr std::size_t chunk = 64;
    for (std::size_t b = 0; b < frames.size(); b += chunk) {
      std::vector<const Tensor*> px;
      for (std::size_t i = b; i < std::min(frames.size(), b + chunk); ++i) px.push_back(&frames[i].pixels);
      const Tensor out = encode_batch(px, enc, model.encoder);
      std::copy(out.data(), out.data() + out.size(), cache.begin() + b * L * D);
    }
  }

  Params trainable = config.freeze_encoder ? with_prefix(params, "decoder.") : params;
  const Params frozen_encoder = config.freeze_encoder ? with_prefix(params, "encoder.") : Params{};
  AdamState adam{config.adam, {}, {}, 0};

  for (std::size_t s = 1; s <= config.steps; ++s) {
    const auto starts = sample_windows(frames, B, T, derive_seed(config.seed, 4, s));
    Tape<float> tape;
    auto vars = bind_params(tape, trainable, true);
    std::vector<Var<float>> cubes;
    if (config.freeze_encoder) {
      for (std::size_t t = 0; t < T; ++t) {
        Tensor cube(Shape{B, L, D});
        for (std::size_t b = 0; b < B; ++b) {
          const float* src = cache.data() + (starts[b] + t) * L * D;
          std::copy(src, src + L * D, cube.data() + b * L * D);
        }
        cubes.push_back(tape.constant(std::move(cube)));
      }
    } else {
      std::vector<std::size_t> ids;  // time-major
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) ids.push_back(starts[b] + t);
      }
      auto all = reshape(encode(tape.constant(stack_frames(frames, ids, model.encoder)), vars,
                                model.encoder),
                         Shape{T * B, L, D});
      for (std::size_t t = 0; t < T; ++t) cubes.push_back(slice(all, 0, t * B, (t + 1) * B));
    }
    Tensor targets(Shape{B, T});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) targets.at({b, t}) = static_cast<float>(frames[starts[b] + t].u);
    }
    Rng dropout_rng = make_rng(config.seed, 5, s);
    DecoderContext<float> ctx{vars, model.decoder, &dropout_rng};
    auto r = rollout(cubes, ctx);
    auto loss = window_loss(r.u_hat, r.alpha, targets, config.loss);
    auto grads = named_gradients(vars, backward(tape, Tensor(Shape{1}, 1.0f)));
    clip_global_norm(grads, config.clip_norm);
    adam_step(trainable, grads, adam);

    if (config.log_every != 0 && (s % config.log_every == 0 || s == config.steps)) {
      double mae = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
          mae += theta_error(r.u_hat[t].value()[b], frames[starts[b] + t], vehicle);
        }
      }
      MetricRow row{s, loss.value()[0], mae / static_cast<double>(B * T)};
      result.metrics.push_back(row);
      if (on_metric) on_metric(row);
    }
  }

  result.params = trainable;
  result.params.insert(frozen_encoder.begin(), frozen_encoder.end());
  return result;
}

std::vector<std::pair<std::size_t, std::size_t>> consecutive_chunks(
    std::span<const ProcessedFrame> frames, std::size_t T) {
  if (T == 0) throw std::invalid_argument("chunk length must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= frames.size(); ++i) {
    const bool gap = i == frames.size() || frames[i].index != frames[i - 1].index + 1;
    if (gap || i - begin == T) {
      chunks.emplace_back(begin, i);
      begin = i;
    }
  }
  return chunks;
}

namespace {

MaeResult summarize(const std::vector<double>& errors) {
  MaeResult r;
  r.frames = errors.size();
  if (errors.empty()) return r;
  const double n = static_cast<double>(errors.size());
  r.mae_deg = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
  double var = 0.0;
  for (double e : errors) var += (e - r.mae_deg) * (e - r.mae_deg);
  r.sd_deg = std::sqrt(var / n);
  return r;
}

}  // namespace

MaeResult evaluate_mae(std::span<const ProcessedFrame> frames, const SteeringModel& model,
                       std::size_t T, const VehicleParams& vehicle) {
  std::vector<double> errors;
  for (auto [b, e] : consecutive_chunks(frames, T)) {
    const auto window = frames.subspan(b, e - b);
    const auto u_hat = model.predict(window);
    if (u_hat.size() != window.size()) throw std::logic_error("model returned a wrong-length prediction");
    for (std::size_t k = 0; k < window.size(); ++k) errors.push_back(theta_error(u_hat[k], window[k], vehicle));
  }
  return summarize(errors);
}

double mean_theta(std::span<const ProcessedFrame> frames) {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.theta_hat;
  return s / static_cast<double>(frames.size());
}

MaeResult constant_mae(std::span<const ProcessedFrame> frames, double theta_deg) {
  std::vector<double> errors;
  for (const auto& f : frames) errors.push_back(std::abs(f.theta_hat - theta_deg));
  return summarize(errors);
}

template Var<float> window_loss<float>(const std::vector<Var<float>>&, const std::vector<Var<float>>&,
                                       const Tensor&, const LossConfig&);
template Var<double> window_loss<double>(const std::vector<Var<double>>&,
                                         const std::vector<Var<double>>&, const Tensor64&,
                                         const LossConfig&);
template Params named_gradients<float>(const ParamVars<float>&, const Gradients<float>&);
template BasicParams<double> named_gradients<double>(const ParamVars<double>&, const Gradients<double>&);

}  // namespace attsteer
