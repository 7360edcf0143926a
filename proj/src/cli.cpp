#include "attsteer/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <set>

#include "attsteer/dataset.hpp"
#include "attsteer/params.hpp"

#ifndef ATTSTEER_VERSION
#define ATTSTEER_VERSION "unknown"
#endif

namespace attsteer {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& field, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    field = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

void read_path(const json& obj, const char* key, fs::path& field) {
  std::string s;
  read(obj, key, s, "config");
  if (!s.empty()) field = s;
}

void apply_encoder(EncoderConfig& enc, const json& j) {
  check_keys(j, {"layers", "input"}, "model.encoder");
  if (j.contains("layers")) {
    std::vector<std::array<std::size_t, 3>> layers;
    read(j, "layers", layers, "model.encoder");
    enc.layers.clear();
    for (const auto& l : layers) enc.layers.push_back({l[0], l[1], l[2]});
  }
  if (j.contains("input")) {
    std::array<std::size_t, 2> hw{};
    read(j, "input", hw, "model.encoder");
    enc.input_height = hw[0];
    enc.input_width = hw[1];
  }
}

void apply_decoder(DecoderConfig& d, const json& j) {
  const std::string w = "model.decoder";
  check_keys(j, {"hidden", "attn_hidden", "out_hidden", "keep_prob", "use_beta", "output_scale"}, w);
  read(j, "hidden", d.hidden, w);
  read(j, "attn_hidden", d.attn_hidden, w);
  read(j, "out_hidden", d.out_hidden, w);
  read(j, "keep_prob", d.keep_prob, w);
  read(j, "use_beta", d.use_beta, w);
  read(j, "output_scale", d.output_scale, w);
}

void apply_model(ModelConfig& m, const json& j) {
  check_keys(j, {"preset", "encoder", "decoder"}, "model");
  if (j.contains("preset")) {
    std::string preset;
    read(j, "preset", preset, "model");
    if (preset == "full") m = ModelConfig::full_scale();
    else if (preset == "desk") m = ModelConfig::desk_scale();
    else throw ConfigError("model.preset must be 'full' or 'desk', got '" + preset + "'");
  }
  if (j.contains("encoder")) apply_encoder(m.encoder, j.at("encoder"));
  if (j.contains("decoder")) apply_decoder(m.decoder, j.at("decoder"));
  m.sync();
}

void apply_train(TrainConfig& t, const json& j) {
  const std::string w = "train";
  check_keys(j, {"steps", "batch", "lr", "beta1", "beta2", "adam_eps", "clip_norm", "freeze_encoder",
                 "log_every", "pretrain"},
             w);
  read(j, "steps", t.steps, w);
  read(j, "batch", t.batch, w);
  read(j, "lr", t.adam.lr, w);
  read(j, "beta1", t.adam.beta1, w);
  read(j, "beta2", t.adam.beta2, w);
  read(j, "adam_eps", t.adam.eps, w);
  read(j, "clip_norm", t.clip_norm, w);
  read(j, "freeze_encoder", t.freeze_encoder, w);
  read(j, "log_every", t.log_every, w);
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    const std::string pw = "train.pretrain";
    check_keys(p, {"enabled", "steps", "batch", "lr", "head"}, pw);
    read(p, "enabled", t.pretrain.enabled, pw);
    read(p, "steps", t.pretrain.steps, pw);
    read(p, "batch", t.pretrain.batch, pw);
    read(p, "lr", t.pretrain.lr, pw);
    read(p, "head", t.pretrain.head, pw);
  }
}

void apply_loss(LossConfig& l, const json& j) {
  check_keys(j, {"lambda", "penalty", "window"}, "loss");
  read(j, "lambda", l.lambda, "loss");
  read(j, "window", l.window, "loss");
  if (j.contains("penalty")) {
    std::string p;
    read(j, "penalty", p, "loss");
    try {
      l.penalty = parse_penalty_form(p);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
}

void apply_saliency(SaliencyConfig& s, const json& j) {
  const std::string w = "saliency";
  check_keys(j, {"particles", "eps", "min_pts", "time_scale", "tau_causal", "warp_size", "upsample",
                 "blur_sigma", "blur_radius"},
             w);
  read(j, "particles", s.particles, w);
  read(j, "eps", s.eps, w);
  read(j, "min_pts", s.min_pts, w);
  read(j, "time_scale", s.time_scale, w);
  read(j, "tau_causal", s.tau_causal, w);
  read(j, "warp_size", s.warp_size, w);
  read(j, "upsample", s.upsample, w);
  read(j, "blur_sigma", s.blur_sigma, w);
  read(j, "blur_radius", s.blur_radius, w);
}

void apply_scene(SceneParams& p, const json& j) {
  const std::string w = "scene";
  check_keys(j, {"frames", "height", "width", "horizon", "frame_rate", "telemetry_rate", "reversion",
                 "volatility", "clamp", "bend_gain", "lane_width", "lane_width_far", "mean_speed",
                 "speed_sd", "speed_reversion", "min_speed", "max_speed", "steering_noise_deg",
                 "velocity_noise", "distractor_rate", "max_distractors", "distractor_life_min",
                 "distractor_life_max"},
             w);
  read(j, "frames", p.frames, w);
  read(j, "height", p.height, w);
  read(j, "width", p.width, w);
  read(j, "horizon", p.horizon, w);
  read(j, "frame_rate", p.frame_rate, w);
  read(j, "telemetry_rate", p.telemetry_rate, w);
  read(j, "reversion", p.reversion, w);
  read(j, "volatility", p.volatility, w);
  read(j, "clamp", p.clamp, w);
  read(j, "bend_gain", p.bend_gain, w);
  read(j, "lane_width", p.lane_width, w);
  read(j, "lane_width_far", p.lane_width_far, w);
  read(j, "mean_speed", p.mean_speed, w);
  read(j, "speed_sd", p.speed_sd, w);
  read(j, "speed_reversion", p.speed_reversion, w);
  read(j, "min_speed", p.min_speed, w);
  read(j, "max_speed", p.max_speed, w);
  read(j, "steering_noise_deg", p.steering_noise_deg, w);
  read(j, "velocity_noise", p.velocity_noise, w);
  read(j, "distractor_rate", p.distractor_rate, w);
  read(j, "max_distractors", p.max_distractors, w);
  read(j, "distractor_life_min", p.distractor_life_min, w);
  read(j, "distractor_life_max", p.distractor_life_max, w);
}

json encoder_json(const EncoderConfig& e) {
  json layers = json::array();
  for (const auto& l : e.layers) layers.push_back({l.kernel, l.stride, l.channels});
  return json{{"layers", layers}, {"input", {e.input_height, e.input_width}}};
}

}  // namespace

PreprocessConfig RunConfig::preprocess() const {
  PreprocessConfig p;
  p.smoothing = smoothing;
  p.vehicle = vehicle;
  p.min_speed = min_speed;
  p.height = model.encoder.input_height;
  p.width = model.encoder.input_width;
  return p;
}

void RunConfig::validate() const {
  try {
    smoothing.validate();
    vehicle.validate();
    model.validate();
    train.loss.validate();
    saliency.validate();
    scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.batch == 0) throw ConfigError("train.batch must be positive");
  for (double a : sweep_alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep.alpha_s entries must lie in [0, 1]");
  }
}

void apply_config(RunConfig& c, const json& j) {
  check_keys(j,
             {"version", "subcommand", "dataset", "checkpoint", "seed", "smoothing", "vehicle", "min_speed",
              "model", "loss", "train", "saliency", "scene", "sweep"},
             "config");
  read(j, "seed", c.seed, "config");
  read_path(j, "dataset", c.dataset);
  read_path(j, "checkpoint", c.checkpoint);
  read(j, "min_speed", c.min_speed, "config");
  if (j.contains("smoothing")) {
    const auto& s = j.at("smoothing");
    check_keys(s, {"alpha_s", "enabled"}, "smoothing");
    read(s, "alpha_s", c.smoothing.alpha_s, "smoothing");
    read(s, "enabled", c.smoothing.enabled, "smoothing");
  }
  if (j.contains("vehicle")) {
    const auto& v = j.at("vehicle");
    check_keys(v, {"steering_ratio", "slip", "wheelbase"}, "vehicle");
    read(v, "steering_ratio", c.vehicle.steering_ratio, "vehicle");
    read(v, "slip", c.vehicle.slip, "vehicle");
    read(v, "wheelbase", c.vehicle.wheelbase, "vehicle");
  }
  if (j.contains("model")) apply_model(c.model, j.at("model"));
  if (j.contains("loss")) apply_loss(c.train.loss, j.at("loss"));
  if (j.contains("train")) apply_train(c.train, j.at("train"));
  if (j.contains("saliency")) apply_saliency(c.saliency, j.at("saliency"));
  if (j.contains("scene")) apply_scene(c.scene, j.at("scene"));
  if (j.contains("sweep")) {
    check_keys(j.at("sweep"), {"alpha_s"}, "sweep");
    read(j.at("sweep"), "alpha_s", c.sweep_alphas, "sweep");
  }
}

json config_to_json(const RunConfig& c) {
  const auto& d = c.model.decoder;
  const auto& t = c.train;
  const auto& s = c.saliency;
  const auto& p = c.scene;
  json j;
  j["seed"] = c.seed;
  j["smoothing"] = {{"alpha_s", c.smoothing.alpha_s}, {"enabled", c.smoothing.enabled}};
  j["vehicle"] = {{"steering_ratio", c.vehicle.steering_ratio},
                  {"slip", c.vehicle.slip},
                  {"wheelbase", c.vehicle.wheelbase}};
  j["min_speed"] = c.min_speed;
  j["model"] = {{"encoder", encoder_json(c.model.encoder)},
                {"decoder",
                 {{"hidden", d.hidden},
                  {"attn_hidden", d.attn_hidden},
                  {"out_hidden", d.out_hidden},
                  {"keep_prob", d.keep_prob},
                  {"use_beta", d.use_beta},
                  {"output_scale", d.output_scale}}}};
  j["loss"] = {{"lambda", t.loss.lambda}, {"penalty", to_string(t.loss.penalty)}, {"window", t.loss.window}};
  j["train"] = {{"steps", t.steps},
                {"batch", t.batch},
                {"lr", t.adam.lr},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"clip_norm", t.clip_norm},
                {"freeze_encoder", t.freeze_encoder},
                {"log_every", t.log_every},
                {"pretrain",
                 {{"enabled", t.pretrain.enabled},
                  {"steps", t.pretrain.steps},
                  {"batch", t.pretrain.batch},
                  {"lr", t.pretrain.lr},
                  {"head", t.pretrain.head}}}};
  j["saliency"] = {{"particles", s.particles}, {"eps", s.eps},
                   {"min_pts", s.min_pts},     {"time_scale", s.time_scale},
                   {"tau_causal", s.tau_causal}, {"warp_size", s.warp_size},
                   {"upsample", s.upsample},   {"blur_sigma", s.blur_sigma},
                   {"blur_radius", s.blur_radius}};
  j["scene"] = {{"frames", p.frames},
                {"height", p.height},
                {"width", p.width},
                {"horizon", p.horizon},
                {"frame_rate", p.frame_rate},
                {"telemetry_rate", p.telemetry_rate},
                {"reversion", p.reversion},
                {"volatility", p.volatility},
                {"clamp", p.clamp},
                {"bend_gain", p.bend_gain},
                {"lane_width", p.lane_width},
                {"lane_width_far", p.lane_width_far},
                {"mean_speed", p.mean_speed},
                {"speed_sd", p.speed_sd},
                {"speed_reversion", p.speed_reversion},
                {"min_speed", p.min_speed},
                {"max_speed", p.max_speed},
                {"steering_noise_deg", p.steering_noise_deg},
                {"velocity_noise", p.velocity_noise},
                {"distractor_rate", p.distractor_rate},
                {"max_distractors", p.max_distractors},
                {"distractor_life_min", p.distractor_life_min},
                {"distractor_life_max", p.distractor_life_max}};
  j["sweep"] = {{"alpha_s", c.sweep_alphas}};
  return j;
}

std::string version_string() { return ATTSTEER_VERSION; }

Image render_overlay(const Image& frame, const AttentionMap& map, const std::vector<Polygon>* causal_hulls) {
  if (frame.channels != 3) throw std::invalid_argument("render_overlay expects an RGB frame");
  if (frame.height != map.height || frame.width != map.width) {
    throw std::invalid_argument("render_overlay: frame is " + std::to_string(frame.height) + "x" +
                                std::to_string(frame.width) + " but map is " + std::to_string(map.height) +
                                "x" + std::to_string(map.width));
  }
  constexpr double kOpacity = 0.7;
  Image out = frame;
  const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  if (!(peak > 0.0)) return out;

  std::vector<bool> region(frame.height * frame.width, causal_hulls == nullptr);
  if (causal_hulls) {
    for (const auto& h : *causal_hulls) {
      for (auto [x, y] : hull_pixels(h, frame.width, frame.height)) region[y * frame.width + x] = true;
    }
  }
  for (std::size_t y = 0; y < frame.height; ++y) {
    for (std::size_t x = 0; x < frame.width; ++x) {
      const double m = map.at(y, x) / peak;
      if (m <= 0.0 || !region[y * frame.width + x]) continue;
      const double a = kOpacity * m;
      for (std::size_t c = 0; c < 3; ++c) {
        const double target = c == 0 ? 255.0 : 0.0;
        const double v = (1.0 - a) * frame.at(y, x, c) + a * target;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  if (causal_hulls) {
    // outlines: pixels within half a pixel of an edge
    for (const auto& h : *causal_hulls) {
      for (std::size_t i = 0; i < h.size() && h.size() > 1; ++i) {
        const Point a = h[i], b = h[(i + 1) % h.size()];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const auto n = static_cast<std::size_t>(std::ceil(len * 2.0)) + 1;
        for (std::size_t k = 0; k <= n; ++k) {
          const double t = static_cast<double>(k) / static_cast<double>(n);
          const auto x = static_cast<std::size_t>(std::lround(a.x + t * (b.x - a.x)));
          const auto y = static_cast<std::size_t>(std::lround(a.y + t * (b.y - a.y)));
          if (x >= frame.width || y >= frame.height || map.at(y, x) <= 0.0) continue;
          out.at(y, x, 0) = 255;
          out.at(y, x, 1) = 255;
          out.at(y, x, 2) = 0;
        }
      }
    }
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_run_json(const RunConfig& c) {
  json j;
  j["version"] = version_string();
  j["subcommand"] = c.subcommand;
  if (!c.dataset.empty()) j["dataset"] = c.dataset.string();
  if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint.string();
  const json body = config_to_json(c);
  for (const auto& [k, v] : body.items()) j[k] = v;
  write_text(c.out / "run.json", j.dump(2) + "\n");
}

void require(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("--") + what + " is required");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " '" + p.string() + "' does not exist");
}

void require_out(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(c.out);
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string s = "step,train_loss,train_mae_deg\n";
  for (const auto& r : rows) {
    s += std::to_string(r.step) + ',' + format_real(r.train_loss) + ',' + format_real(r.train_mae_deg) + '\n';
  }
  return s;
}

Params train_and_pack(const RunConfig& c, const Dataset& ds, std::vector<MetricRow>* metrics,
                      std::vector<MetricRow>* pretrain_metrics) {
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  auto r = train(ds.frames, c.model, tc, c.vehicle);
  if (metrics) *metrics = std::move(r.metrics);
  if (pretrain_metrics) *pretrain_metrics = std::move(r.pretrain_metrics);
  embed_config(r.params, c.model);
  return r.params;
}

// Dataset preprocessed for a loaded model's input extents.
Dataset load_for(const RunConfig& c, const AttentionSteeringModel& model) {
  PreprocessConfig pc = c.preprocess();
  pc.height = model.config().encoder.input_height;
  pc.width = model.config().encoder.input_width;
  return load_dataset(c.dataset, pc);
}

// Overlay file names follow the source frame files, not retained positions.
std::vector<std::string> source_stems(const fs::path& dataset) {
  std::vector<std::string> stems;
  for (const auto& e : read_frames_csv(dataset / "frames.csv")) stems.push_back(frame_stem(e.index));
  return stems;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  require_out(c);
  SceneParams p = c.scene;
  p.seed = c.seed;
  p.vehicle = c.vehicle;
  const auto seq = generate_sequence(p);
  write_sequence(c.out, seq);
  write_run_json(c);
  out << "wrote " << seq.frames.size() << " frames to " << c.out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  require(c.dataset, "dataset");
  require_out(c);
  const auto ds = load_dataset(c.dataset, c.preprocess());
  std::vector<MetricRow> metrics, pre;
  const Params params = train_and_pack(c, ds, &metrics, &pre);
  save_checkpoint(c.out / "model.ckpt", params);
  write_text(c.out / "metrics.csv", metrics_csv(metrics));
  if (!pre.empty()) write_text(c.out / "pretrain_metrics.csv", metrics_csv(pre));
  write_run_json(c);
  out << "trained " << c.train.steps << " steps on " << ds.frames.size() << " frames";
  if (!metrics.empty()) out << ", final train MAE " << format_real(metrics.back().train_mae_deg) << " deg";
  out << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  require(c.dataset, "dataset");
  require(c.checkpoint, "checkpoint");
  const auto model = AttentionSteeringModel::load(c.checkpoint);
  const auto ds = load_for(c, model);
  const auto r = evaluate_mae(ds.frames, model, c.train.loss.window, c.vehicle);
  char line[128];
  std::snprintf(line, sizeof line, "MAE %.3f SD %.3f frames %zu\n", r.mae_deg, r.sd_deg, r.frames);
  out << line;
  if (!c.out.empty()) {
    require_out(c);
    json j{{"mae_deg", r.mae_deg}, {"sd_deg", r.sd_deg}, {"frames", r.frames}};
    write_text(c.out / "evaluation.json", j.dump(2) + "\n");
    write_run_json(c);
  }
  return 0;
}

int cmd_attend(const RunConfig& c, std::ostream& out) {
  require(c.dataset, "dataset");
  require(c.checkpoint, "checkpoint");
  require_out(c);
  const auto model = AttentionSteeringModel::load(c.checkpoint);
  const auto ds = load_for(c, model);
  const auto& enc = model.config().encoder;
  const auto stems = source_stems(c.dataset);
  fs::create_directories(c.out / "attend");
  std::span<const ProcessedFrame> frames(ds.frames);
  for (auto [b, e] : consecutive_chunks(frames, c.train.loss.window)) {
    const auto pred = model.attend(frames.subspan(b, e - b));
    for (std::size_t t = 0; t < e - b; ++t) {
      const auto& f = frames[b + t];
      const auto map = build_map(pred.alpha[t], enc.grid_height(), enc.grid_width(), c.saliency);
      write_pnm(c.out / "attend" / (stems.at(f.index) + ".ppm"),
                render_overlay(hsv_to_rgb_image(f.pixels), map));
    }
  }
  write_run_json(c);
  out << "wrote " << frames.size() << " overlays to " << (c.out / "attend").string() << "\n";
  return 0;
}

int cmd_causal(const RunConfig& c, std::ostream& out) {
  require(c.dataset, "dataset");
  require(c.checkpoint, "checkpoint");
  require_out(c);
  const auto model = AttentionSteeringModel::load(c.checkpoint);
  const auto ds = load_for(c, model);
  const auto stems = source_stems(c.dataset);
  fs::create_directories(c.out / "causal");
  std::span<const ProcessedFrame> frames(ds.frames);
  std::string report;
  std::size_t window_id = 0, clusters = 0, spurious = 0;
  for (auto [b, e] : consecutive_chunks(frames, c.train.loss.window)) {
    const auto win = frames.subspan(b, e - b);
    const auto a = analyze_window(win, window_id, model, c.saliency, c.vehicle,
                                  derive_seed(c.seed, 30, window_id));
    for (const auto& line : report_json_lines(a.report)) report += line + "\n";
    for (std::size_t t = 0; t < win.size(); ++t) {
      std::vector<Polygon> hulls;
      for (const auto& cr : a.report.clusters) {
        if (cr.verdict != Verdict::causal) continue;
        if (auto it = cr.cluster.hulls.find(t); it != cr.cluster.hulls.end()) hulls.push_back(it->second);
      }
      write_pnm(c.out / "causal" / (stems.at(win[t].index) + ".ppm"),
                render_overlay(hsv_to_rgb_image(win[t].pixels), a.maps[t], &hulls));
    }
    clusters += a.report.clusters.size();
    for (const auto& cr : a.report.clusters) spurious += cr.verdict == Verdict::spurious;
    ++window_id;
  }
  write_text(c.out / "causal_report.jsonl", report);
  write_run_json(c);
  out << window_id << " windows, " << clusters << " clusters, " << spurious << " spurious\n";
  return 0;
}

int cmd_sweep(const RunConfig& c, std::ostream& out) {
  require(c.dataset, "dataset");
  require_out(c);
  std::string csv = "alpha_s,mae_deg,sd_deg,frames\n";
  for (double a : c.sweep_alphas) {
    RunConfig rc = c;
    rc.smoothing.alpha_s = a;
    rc.smoothing.enabled = true;
    const auto ds = load_dataset(c.dataset, rc.preprocess());
    AttentionSteeringModel model(rc.model, train_and_pack(rc, ds, nullptr, nullptr));
    const auto r = evaluate_mae(ds.frames, model, c.train.loss.window, c.vehicle);
    csv += format_real(a) + ',' + format_real(r.mae_deg) + ',' + format_real(r.sd_deg) + ',' +
           std::to_string(r.frames) + '\n';
    char line[96];
    std::snprintf(line, sizeof line, "alpha_s %.2f MAE %.3f SD %.3f\n", a, r.mae_deg, r.sd_deg);
    out << line;
  }
  write_text(c.out / "sweep.csv", csv);
  write_run_json(c);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based steering prediction with causal saliency filtering", "steer"};
  app.require_subcommand(1, 1);

  std::string config_path, dataset, checkpoint, outdir, penalty;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, alpha_s;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config (run.json files are accepted)");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", outdir, "output directory");
    sub->add_option("--dataset", dataset, "dataset directory");
    sub->add_option("--checkpoint", checkpoint, "model checkpoint");
    sub->add_option("--lambda", lambda, "attention penalty weight");
    sub->add_option("--penalty", penalty, "attention penalty form")->check(CLI::IsMember({"squared", "literal"}));
    sub->add_option("--alpha-s", alpha_s, "steering/velocity smoothing factor");
  };
  const std::vector<std::pair<const char*, const char*>> commands{
      {"synth", "generate a synthetic dataset"},
      {"train", "train a model; writes model.ckpt and metrics.csv"},
      {"evaluate", "print MAE and SD in degrees"},
      {"attend", "write attention overlays"},
      {"causal", "cluster attention, test causality, write a report and refined overlays"},
      {"sweep", "MAE against the smoothing factor"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int code = app.exit(e, msg, msg);
    (code == 0 ? out : err) << msg.str();
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig c;
    c.subcommand = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw ConfigError("cannot open config '" + config_path + "'");
      json j;
      try {
        j = json::parse(is);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed config '" + config_path + "': " + e.what());
      }
      apply_config(c, j);
    }
    if (seed) c.seed = *seed;
    if (!dataset.empty()) c.dataset = dataset;
    if (!checkpoint.empty()) c.checkpoint = checkpoint;
    if (!outdir.empty()) c.out = outdir;
    if (lambda) c.train.loss.lambda = *lambda;
    if (!penalty.empty()) c.train.loss.penalty = parse_penalty_form(penalty);
    if (alpha_s) c.smoothing.alpha_s = *alpha_s;
    c.validate();

    if (c.subcommand == "synth") return cmd_synth(c, out);
    if (c.subcommand == "train") return cmd_train(c, out);
    if (c.subcommand == "evaluate") return cmd_evaluate(c, out);
    if (c.subcommand == "attend") return cmd_attend(c, out);
    if (c.subcommand == "causal") return cmd_causal(c, out);
    return cmd_sweep(c, out);
  } catch (const std::exception& e) {
    err << "steer " << app.get_subcommands().front()->get_name() << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace attsteer
