#include <doctest.h>

#include <cstdio>
#include <random>

#include "attsteer/dataset.hpp"
#include "support.hpp"

using namespace attsteer;
using namespace attsteer::testing;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

Image gray_frame(std::size_t h, std::size_t w, std::uint8_t v = 100) { return Image(h, w, 3, v); }

AttentionMap make_map(std::size_t h, std::size_t w, double fill = 0.0) {
  return {h, w, std::vector<double>(h * w, fill), 0.0};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2);
}

// Small desk-scale run: 60-frame scenes, a few steps of training.
json small_config() {
  return json::parse(R"({
    "model": {"preset": "desk"},
    "scene": {"frames": 60},
    "loss": {"window": 10},
    "train": {"steps": 6, "batch": 2, "log_every": 2, "pretrain": {"steps": 3, "batch": 2}},
    "saliency": {"particles": 120}
  })");
}

bool inside_ccw(const std::vector<Point>& hull, double x, double y) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point a = hull[i], b = hull[(i + 1) % hull.size()];
    if ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) < 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("zero map leaves the frame untouched") {
  std::mt19937_64 rng(3);
  Image frame(12, 20, 3);
  for (auto& p : frame.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  CHECK(render_overlay(frame, make_map(12, 20)).pixels == frame.pixels);
}

TEST_CASE("uniform map gives a uniform tint") {
  const auto out = render_overlay(gray_frame(8, 8), make_map(8, 8, 0.3));
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == out.at(0, 0, c));
    }
  }
  CHECK(out.at(0, 0, 0) > 100);
  CHECK(out.at(0, 0, 1) < 100);
}

TEST_CASE("red excess peaks at the map argmax and is absent where the map is zero") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto map = make_map(16, 24);
    for (auto& v : map.values) v = uni(rng) < 0.5 ? 0.0 : uni(rng);
    const std::size_t peak = rng() % map.values.size();
    map.values[peak] = 2.0;
    const auto frame = gray_frame(16, 24, 60);
    const auto out = render_overlay(frame, map);
    int best = -1;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      const int excess = out.pixels[3 * i] - frame.pixels[3 * i];
      if (excess > best) best = excess, arg = i;
      if (map.values[i] == 0.0) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.pixels[3 * i + c] == frame.pixels[3 * i + c]);
      }
    }
    CHECK(arg == peak);
  }
}

TEST_CASE("hull overlays tint only causal interiors") {
  const auto frame = gray_frame(20, 20);
  const auto map = make_map(20, 20, 1.0);
  const std::vector<Polygon> hulls{{{4, 4}, {10, 4}, {10, 10}, {4, 10}}};
  const auto out = render_overlay(frame, map, &hulls);
  CHECK(out.at(15, 15, 0) == 100);
  CHECK(out.at(2, 2, 0) == 100);
  CHECK(out.at(7, 7, 0) > 100);
  // outline
  CHECK(out.at(4, 7, 1) == 255);

  const std::vector<Polygon> none;
  CHECK(render_overlay(frame, map, &none).pixels == frame.pixels);
}

TEST_CASE("overlay rejects mismatched extents") {
  CHECK_THROWS_AS(render_overlay(gray_frame(8, 8), make_map(8, 9, 1.0)), std::invalid_argument);
}

TEST_CASE("config survives a JSON roundtrip and unknown keys are rejected") {
  RunConfig c;
  apply_config(c, json::parse(R"({"seed": 9, "model": {"preset": "desk", "decoder": {"hidden": 32}},
                                  "loss": {"penalty": "literal", "lambda": 0.5},
                                  "smoothing": {"alpha_s": 0.3}, "scene": {"volatility": 0.01},
                                  "sweep": {"alpha_s": [0.2, 1.0]}})"));
  CHECK(c.seed == 9);
  CHECK(c.model.decoder.hidden == 32);
  CHECK(c.model.decoder.locations == 50);
  CHECK(c.train.loss.penalty == PenaltyForm::literal);
  const json first = config_to_json(c);
  RunConfig d;
  apply_config(d, first);
  CHECK(config_to_json(d) == first);

  RunConfig e;
  CHECK_THROWS_AS(apply_config(e, json::parse(R"({"trian": {}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(e, json::parse(R"({"train": {"stpes": 3}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(e, json::parse(R"({"train": {"steps": "many"}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(e, json::parse(R"({"model": {"preset": "huge"}})")), ConfigError);
}

TEST_CASE("bad invocations exit nonzero with a diagnostic") {
  const auto dir = scratch_dir("cli_errors");
  CHECK(steer({}).status != 0);
  CHECK(steer({"fly"}).status != 0);
  CHECK(steer({"synth", "--frobnicate"}).status != 0);

  auto r = steer({"train", "--dataset", (dir / "missing").string(), "--out", (dir / "o").string()});
  CHECK(r.status != 0);
  CHECK(r.err.find("does not exist") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  r = steer({"synth", "--config", (dir / "broken.json").string(), "--out", (dir / "o").string()});
  CHECK(r.status != 0);
  CHECK(r.err.find("malformed") != std::string::npos);

  r = steer({"synth", "--out", (dir / "o").string(), "--alpha-s", "1.5"});
  CHECK(r.status != 0);
  CHECK(steer({"train", "--penalty", "cubic"}).status != 0);
  CHECK(steer({"evaluate", "--dataset", dir.string()}).status != 0);
}

TEST_CASE("synth is byte-identical across runs and records its seed") {
  const auto dir = scratch_dir("cli_synth");
  write_json(dir / "c.json", small_config());
  for (const char* name : {"a", "b"}) {
    const auto r = steer({"synth", "--config", (dir / "c.json").string(), "--seed", "7", "--out",
                          (dir / name).string()});
    REQUIRE(r.status == 0);
  }
  const auto a = read_tree(dir / "a");
  CHECK(a.size() == 3 * 60 + 4);  // frames, two masks each, three CSVs, run.json
  CHECK(a == read_tree(dir / "b"));
  const auto run = json::parse(a.at("run.json"));
  CHECK(run.at("seed") == 7);
  CHECK(run.at("version").get<std::string>() == version_string());
}

TEST_CASE("evaluate prints MAE 0.000 for a perfect predictor") {
  const auto dir = scratch_dir("cli_perfect");
  // a straight, noiseless road needs zero steering; an all-zero model predicts exactly that
  json cfg = small_config();
  cfg["scene"]["volatility"] = 0.0;
  cfg["scene"]["steering_noise_deg"] = 0.0;
  write_json(dir / "c.json", cfg);
  REQUIRE(steer({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "d").string()}).status == 0);

  const auto config = ModelConfig::desk_scale();
  Params params = init_model_params(config, 1);
  for (auto& [name, t] : params) t.fill(0.0f);
  embed_config(params, config);
  save_checkpoint(dir / "zero.ckpt", params);

  const auto r = steer({"evaluate", "--config", (dir / "c.json").string(), "--dataset", (dir / "d").string(),
                        "--checkpoint", (dir / "zero.ckpt").string()});
  REQUIRE(r.status == 0);
  CHECK(r.out == "MAE 0.000 SD 0.000 frames 60\n");
}

TEST_CASE("train, attend, causal and sweep write their outputs; run.json replays training") {
  const auto dir = scratch_dir("cli_pipeline");
  write_json(dir / "c.json", small_config());
  const std::string cfg = (dir / "c.json").string(), data = (dir / "d").string();
  REQUIRE(steer({"synth", "--config", cfg, "--seed", "4", "--out", data}).status == 0);

  auto r = steer({"train", "--config", cfg, "--seed", "5", "--dataset", data, "--out", (dir / "t").string()});
  REQUIRE(r.status == 0);
  for (const char* f : {"model.ckpt", "metrics.csv", "pretrain_metrics.csv", "run.json"}) CHECK(fs::exists(dir / "t" / f));
  CHECK(read_file(dir / "t" / "metrics.csv").starts_with("step,train_loss,train_mae_deg\n2,"));

  r = steer({"train", "--config", (dir / "t" / "run.json").string(), "--out", (dir / "t2").string()});
  REQUIRE(r.status == 0);
  CHECK(read_file(dir / "t" / "model.ckpt") == read_file(dir / "t2" / "model.ckpt"));
  CHECK(read_file(dir / "t" / "metrics.csv") == read_file(dir / "t2" / "metrics.csv"));

  const std::string ckpt = (dir / "t" / "model.ckpt").string();
  r = steer({"evaluate", "--config", cfg, "--dataset", data, "--checkpoint", ckpt, "--out", (dir / "e").string()});
  REQUIRE(r.status == 0);
  const auto ev = json::parse(read_file(dir / "e" / "evaluation.json"));
  char line[128];
  std::snprintf(line, sizeof line, "MAE %.3f SD %.3f frames %zu\n", ev.at("mae_deg").get<double>(),
                ev.at("sd_deg").get<double>(), ev.at("frames").get<std::size_t>());
  CHECK(r.out == line);

  r = steer({"attend", "--config", cfg, "--dataset", data, "--checkpoint", ckpt, "--out", (dir / "a").string()});
  REQUIRE(r.status == 0);
  const auto overlay = read_pnm(dir / "a" / "attend" / (frame_stem(1) + ".ppm"));
  CHECK(overlay.height == 40);
  CHECK(overlay.width == 80);

  r = steer({"sweep", "--config", cfg, "--dataset", data, "--out", (dir / "s").string()});
  REQUIRE(r.status == 0);
  const auto csv = read_file(dir / "s" / "sweep.csv");
  CHECK(csv.starts_with("alpha_s,mae_deg,sd_deg,frames\n0.01,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("causal report deltas match a scripted recomputation") {
  const auto dir = scratch_dir("cli_causal");
  write_json(dir / "c.json", small_config());
  const std::string cfg = (dir / "c.json").string(), data = (dir / "d").string();
  REQUIRE(steer({"synth", "--config", cfg, "--seed", "8", "--out", data}).status == 0);
  REQUIRE(steer({"train", "--config", cfg, "--dataset", data, "--out", (dir / "t").string()}).status == 0);
  const auto ckpt = dir / "t" / "model.ckpt";
  const auto r = steer({"causal", "--config", cfg, "--dataset", data, "--checkpoint", ckpt.string(), "--out",
                        (dir / "c").string()});
  REQUIRE(r.status == 0);

  RunConfig rc;
  apply_config(rc, small_config());
  const auto model = AttentionSteeringModel::load(ckpt);
  const auto ds = load_dataset(data, rc.preprocess());
  std::span<const ProcessedFrame> frames(ds.frames);
  const auto chunks = consecutive_chunks(frames, rc.train.loss.window);

  std::istringstream report(read_file(dir / "c" / "causal_report.jsonl"));
  std::string line;
  std::size_t checked = 0;
  while (std::getline(report, line)) {
    const auto j = json::parse(line);
    if (!j.contains("cluster_id")) continue;
    const auto [b, e] = chunks.at(j.at("window_id").get<std::size_t>());
    std::vector<ProcessedFrame> win(frames.begin() + b, frames.begin() + e);
    std::vector<ProcessedFrame> masked = win;
    for (const auto& [key, verts] : j.at("hull_vertices").items()) {
      Polygon hull;
      for (const auto& v : verts) hull.push_back({v[0].get<double>(), v[1].get<double>()});
      auto& f = masked.at(std::stoul(key));
      const std::size_t h = f.pixels.dim(0), w = f.pixels.dim(1);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          if (!inside_ccw(hull, static_cast<double>(x), static_cast<double>(y))) continue;
          for (std::size_t c = 0; c < 3; ++c) f.pixels.at({y, x, c}) = 0.0f;
        }
      }
    }
    const auto base = model.predict(win), occluded = model.predict(masked);
    const std::size_t first = j.at("frame_span")[0], last = j.at("frame_span")[1];
    double sb = 0.0, sm = 0.0;
    for (std::size_t t = first; t <= last; ++t) {
      sb += std::abs(theta_from_u(base[t], win[t].v_hat, rc.vehicle) - win[t].theta_hat);
      sm += std::abs(theta_from_u(occluded[t], win[t].v_hat, rc.vehicle) - win[t].theta_hat);
    }
    const double n = static_cast<double>(last - first + 1);
    CHECK(j.at("delta_mae_deg").get<double>() == doctest::Approx(sm / n - sb / n).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked > 0);
}
