#include "attsteer/decoder.hpp"

#include <array>

#include "attsteer/init.hpp"

namespace attsteer {

void DecoderConfig::validate() const {
  if (locations == 0 || depth == 0 || hidden == 0 || attn_hidden == 0 || out_hidden == 0) {
    throw std::invalid_argument("decoder extents must be positive");
  }
  if (!(output_scale > 0.0)) throw std::invalid_argument("decoder output_scale must be positive");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw std::invalid_argument("decoder keep_prob must be in (0, 1]");
  }
}

Params init_decoder_params(const DecoderConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t D = config.depth, H = config.hidden, A = config.attn_hidden,
                    O = config.out_hidden, Y = config.context_size();
  Params p;
  std::uint64_t k = 0;
  auto weight = [&](const std::string& name, Shape shape) {
    p.emplace(name, xavier_init(shape, derive_seed(seed, 200, k++)));
  };
  auto bias = [&](const std::string& name, std::size_t n) { p.emplace(name, Tensor(Shape{n})); };

  weight("decoder.attn.wx", {D, A});
  weight("decoder.attn.wh", {H, A});
  bias("decoder.attn.b", A);
  weight("decoder.attn.v", {A, 1});
  weight("decoder.beta.w", {H, 1});
  bias("decoder.beta.b", 1);
  weight("decoder.init_c.w", {D, H});
  bias("decoder.init_c.b", H);
  weight("decoder.init_h.w", {D, H});
  bias("decoder.init_h.b", H);
  weight("decoder.lstm.w", {Y + H, 4 * H});
  bias("decoder.lstm.b", 4 * H);
  weight("decoder.out.w1", {Y + H, O});
  bias("decoder.out.b1", O);
  weight("decoder.out.w2", {O, 1});
  bias("decoder.out.b2", 1);
  return p;
}

namespace {

template <typename T>
void check_cube(Var<T> cube, const DecoderConfig& config) {
  const auto& s = cube.shape();
  if (s.size() != 3 || s[1] != config.locations || s[2] != config.depth) {
    throw ShapeError("decoder expects cubes of shape [B, " + std::to_string(config.locations) +
                     ", " + std::to_string(config.depth) + "], got " + to_string(s));
  }
}

template <typename T>
Var<T> maybe_dropout(Var<T> h, const DecoderContext<T>& ctx) {
  if (ctx.dropout_rng == nullptr || ctx.config.keep_prob >= 1.0) return h;
  return dropout(h, make_dropout_mask<T>(h.shape(), ctx.config.keep_prob, *ctx.dropout_rng));
}

template <typename T>
Var<T> affine(Var<T> x, const ParamVars<T>& p, const std::string& w, const std::string& b) {
  return matmul(x, param(p, w)) + param(p, b);
}

}  // namespace

template <typename T>
LstmState<T> init_state(Var<T> cube, const DecoderContext<T>& ctx) {
  check_cube(cube, ctx.config);
  const auto mean = scale(reduce_sum(cube, 1), T(1) / static_cast<T>(ctx.config.locations));
  return LstmState<T>{tanh(affine(mean, ctx.params, "decoder.init_h.w", "decoder.init_h.b")),
                      tanh(affine(mean, ctx.params, "decoder.init_c.w", "decoder.init_c.b"))};
}

template <typename T>
Var<T> attention_logits(Var<T> cube, Var<T> h_prev, const DecoderContext<T>& ctx) {
  check_cube(cube, ctx.config);
  const std::size_t B = cube.shape()[0], L = ctx.config.locations, D = ctx.config.depth,
                    A = ctx.config.attn_hidden;
  const auto& p = ctx.params;
  auto xw = reshape(matmul(reshape(cube, Shape{B * L, D}), param(p, "decoder.attn.wx")),
                    Shape{B, L, A});
  auto hw = reshape(matmul(h_prev, param(p, "decoder.attn.wh")), Shape{B, 1, A});
  auto hidden = tanh(xw + hw + param(p, "decoder.attn.b"));
  return reshape(matmul(reshape(hidden, Shape{B * L, A}), param(p, "decoder.attn.v")),
                 Shape{B, L});
}

template <typename T>
Var<T> attend(Var<T> cube, Var<T> h_prev, const DecoderContext<T>& ctx) {
  return softmax(attention_logits(cube, h_prev, ctx), 1);
}

template <typename T>
std::pair<Var<T>, Var<T>> make_context(Var<T> cube, Var<T> alpha, Var<T> h_prev,
                                       const DecoderContext<T>& ctx) {
  check_cube(cube, ctx.config);
  const std::size_t B = cube.shape()[0], L = ctx.config.locations;
  auto weighted = reshape(cube * reshape(alpha, Shape{B, L, 1}), Shape{B, ctx.config.context_size()});
  Var<T> beta;
  if (ctx.config.use_beta) {
    beta = sigmoid(affine(h_prev, ctx.params, "decoder.beta.w", "decoder.beta.b"));
  } else {
    beta = cube.tape->constant(BasicTensor<T>(Shape{B, 1}, T(1)));
  }
  return {weighted * beta, beta};
}

template <typename T>
LstmState<T> lstm_cell(Var<T> input, const LstmState<T>& prev, const DecoderContext<T>& ctx) {
  const std::size_t H = ctx.config.hidden;
  const std::array<Var<T>, 2> parts{input, prev.h};
  auto z = affine(concat<T>(parts, 1), ctx.params, "decoder.lstm.w", "decoder.lstm.b");
  auto i = sigmoid(slice(z, 1, 0, H));
  auto f = sigmoid(slice(z, 1, H, 2 * H));
  auto g = tanh(slice(z, 1, 2 * H, 3 * H));
  auto o = sigmoid(slice(z, 1, 3 * H, 4 * H));
  auto c = f * prev.c + i * g;
  return LstmState<T>{o * tanh(c), c};
}

template <typename T>
StepOutput<T> step(Var<T> cube, const LstmState<T>& state, const DecoderContext<T>& ctx) {
  auto h_attn = maybe_dropout(state.h, ctx);
  auto alpha = attend(cube, h_attn, ctx);
  auto [y, beta] = make_context(cube, alpha, state.h, ctx);
  auto next = lstm_cell(y, state, ctx);
  const std::array<Var<T>, 2> parts{y, maybe_dropout(next.h, ctx)};
  auto hidden = relu(affine(concat<T>(parts, 1), ctx.params, "decoder.out.w1", "decoder.out.b1"));
  auto u_hat = scale(affine(hidden, ctx.params, "decoder.out.w2", "decoder.out.b2"),
                     static_cast<T>(ctx.config.output_scale));
  return StepOutput<T>{u_hat, alpha, beta, y, next};
}

template <typename T>
Rollout<T> rollout(const std::vector<Var<T>>& cubes, const DecoderContext<T>& ctx) {
  if (cubes.empty()) throw std::invalid_argument("rollout needs at least one cube");
  Rollout<T> out;
  auto state = init_state(cubes.front(), ctx);
  for (const auto& cube : cubes) {
    auto s = step(cube, state, ctx);
    out.u_hat.push_back(s.u_hat);
    out.alpha.push_back(s.alpha);
    state = s.state;
  }
  return out;
}

RolloutResult run_rollout(const std::vector<Tensor>& flat_cubes, const Params& params,
                          const DecoderConfig& config) {
  Tape<float> tape;
  auto vars = bind_params(tape, params, false);
  std::vector<Var<float>> cubes;
  for (const auto& c : flat_cubes) {
    if (c.rank() != 2) throw ShapeError("run_rollout expects [L, D] cubes, got " + to_string(c.shape()));
    cubes.push_back(tape.constant(c.reshaped(Shape{1, c.dim(0), c.dim(1)})));
  }
  DecoderContext<float> ctx{vars, config, nullptr};
  auto r = rollout(cubes, ctx);
  RolloutResult result;
  for (std::size_t t = 0; t < r.u_hat.size(); ++t) {
    result.u_hat.push_back(r.u_hat[t].value()[0]);
    const auto& a = r.alpha[t].value().values();
    result.alpha.emplace_back(a.begin(), a.end());
  }
  return result;
}

#define ATTSTEER_INSTANTIATE(T)                                                               \
  template LstmState<T> init_state<T>(Var<T>, const DecoderContext<T>&);                      \
  template Var<T> attention_logits<T>(Var<T>, Var<T>, const DecoderContext<T>&);              \
  template Var<T> attend<T>(Var<T>, Var<T>, const DecoderContext<T>&);                        \
  template std::pair<Var<T>, Var<T>> make_context<T>(Var<T>, Var<T>, Var<T>,                  \
                                                     const DecoderContext<T>&);               \
  template LstmState<T> lstm_cell<T>(Var<T>, const LstmState<T>&, const DecoderContext<T>&);  \
  template StepOutput<T> step<T>(Var<T>, const LstmState<T>&, const DecoderContext<T>&);      \
  template Rollout<T> rollout<T>(const std::vector<Var<T>>&, const DecoderContext<T>&);

ATTSTEER_INSTANTIATE(float)
ATTSTEER_INSTANTIATE(double)
#undef ATTSTEER_INSTANTIATE

}  // namespace attsteer
