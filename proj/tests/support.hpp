#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <numeric>
#include <set>
#include <random>
#include <vector>

#include "attsteer/cli.hpp"
#include "attsteer/model.hpp"
#include "attsteer/saliency.hpp"
#include "attsteer/training.hpp"

namespace attsteer::testing {

/// 16x16 input, 2x2 grid of depth 4; small enough for finite differences.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.layers = {{3, 2, 3}, {3, 2, 4}, {3, 2, 4}};
  c.encoder.input_height = 16;
  c.encoder.input_width = 16;
  c.decoder.hidden = 5;
  c.decoder.attn_hidden = 4;
  c.decoder.out_hidden = 6;
  c.decoder.output_scale = 1.0;
  c.sync();
  return c;
}

/// Smallest |input| over every relu and abs record; finite differences are
/// only meaningful when this exceeds the probe step.
inline double kink_margin(const Tape<double>& tape) {
  double margin = INFINITY;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& r = tape.record(i);
    if (r.op != Primitive::relu && r.op != Primitive::abs) continue;
    for (double z : tape.record(r.inputs[0]).value.values()) margin = std::min(margin, std::abs(z));
  }
  return margin;
}

/// Records one training step (encoder, attention decoder with dropout,
/// windowed L1 loss with penalty) for a batch of B sequences of T frames.
inline void record_full_step(Tape<double>& tape, const ModelConfig& config, std::uint64_t seed,
                             std::size_t T = 3, std::size_t B = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  auto params = cast_params<double>(init_model_params(config, seed));
  for (auto& [name, b] : params) {
    // positive biases keep relu units alive at a generic operating point
    if (b.rank() != 1) continue;
    for (auto& x : b.values()) x = pix(rng) * 0.2 + 0.05;
  }
  auto vars = bind_params(tape, params, true);
  const std::size_t H = config.encoder.input_height, W = config.encoder.input_width;
  const std::size_t L = config.decoder.locations, D = config.decoder.depth;
  std::vector<Var<double>> cubes;
  for (std::size_t t = 0; t < T; ++t) {
    BasicTensor<double> frames(Shape{B, H, W, 3});
    for (auto& x : frames.values()) x = pix(rng);
    cubes.push_back(reshape(encode(tape.constant(frames), vars, config.encoder), Shape{B, L, D}));
  }
  Rng dropout_rng(seed + 1);
  DecoderContext<double> ctx{vars, config.decoder, &dropout_rng};
  auto out = rollout(cubes, ctx);
  BasicTensor<double> targets(Shape{B, T});
  for (auto& x : targets.values()) x = pix(rng) - 0.5;
  LossConfig loss;
  loss.lambda = 0.3;
  loss.window = T;
  window_loss(out.u_hat, out.alpha, targets, loss);
}

/// Ignores its input.
class ConstantModel final : public SteeringModel {
 public:
  explicit ConstantModel(double u) : u_(u) {}
  std::vector<double> predict(std::span<const ProcessedFrame> window) const override {
    return std::vector<double>(window.size(), u_);
  }

 private:
  double u_;
};

/// u = gain * mean of the value channel over rows [y0, y1) and columns [x0, x1).
class RegionModel final : public SteeringModel {
 public:
  RegionModel(std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1, double gain)
      : y0_(y0), y1_(y1), x0_(x0), x1_(x1), gain_(gain) {}

  double read(const ProcessedFrame& f) const {
    double s = 0.0;
    for (std::size_t y = y0_; y < y1_; ++y)
      for (std::size_t x = x0_; x < x1_; ++x) s += f.pixels.at({y, x, 2});
    return gain_ * s / static_cast<double>((y1_ - y0_) * (x1_ - x0_));
  }
  std::vector<double> predict(std::span<const ProcessedFrame> window) const override {
    std::vector<double> u;
    for (const auto& f : window) u.push_back(read(f));
    return u;
  }

 private:
  std::size_t y0_, y1_, x0_, x1_;
  double gain_;
};

/// Window of random HSV frames whose targets are what `model` predicts on
/// them, so the unmasked MAE is zero.
inline std::vector<ProcessedFrame> stub_window(const SteeringModel& model, std::size_t T,
                                               std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.2f, 1.0f);
  std::vector<ProcessedFrame> frames(T);
  for (std::size_t t = 0; t < T; ++t) {
    frames[t].pixels = Tensor(Shape{h, w, 3});
    for (auto& v : frames[t].pixels.values()) v = d(rng);
    frames[t].index = t + 1;
    frames[t].v_hat = 20.0;
  }
  const auto u = model.predict(frames);
  for (std::size_t t = 0; t < T; ++t) {
    frames[t].u = u[t];
    frames[t].theta_hat = theta_from_u(u[t], frames[t].v_hat, VehicleParams{});
  }
  return frames;
}

/// Cluster spanning frames [first, last] with the same axis-aligned box hull.
inline SaliencyCluster box_cluster(int id, double x0, double y0, double x1, double y1,
                                   std::size_t first, std::size_t last) {
  SaliencyCluster c;
  c.id = id;
  c.first_frame = first;
  c.last_frame = last;
  for (std::size_t t = first; t <= last; ++t) c.hulls[t] = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
  return c;
}

// ---- reference implementations ----

/// O(n^2) DBSCAN: union-find over core pairs, clusters numbered by their
/// lowest-index core, border points join the lowest adjacent cluster id.
inline std::vector<int> reference_dbscan(std::span<const Particle> pts, double eps, std::size_t min_pts,
                                         double time_scale) {
  const std::size_t n = pts.size();
  auto near = [&](std::size_t i, std::size_t j) {
    const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
    const double dz = time_scale * (double(pts[i].t) - double(pts[j].t));
    return dx * dx + dy * dy + dz * dz <= eps * eps;
  };
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += near(i, j);
    core[i] = count >= min_pts;
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (core[i] && core[j] && near(i, j)) parent[find(i)] = find(j);
  std::vector<int> root_id(n, kNoise), label(n, kNoise);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    auto& id = root_id[find(i)];
    if (id == kNoise) id = next++;
    label[i] = id;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (core[j] && near(i, j) && (label[i] == kNoise || label[j] < label[i])) label[i] = label[j];
    }
  }
  return label;
}

/// Labels renumbered by first appearance, so equal partitions compare equal.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  for (int l : labels) {
    if (l == kNoise) {
      out.push_back(kNoise);
      continue;
    }
    auto [it, fresh] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

/// O(n^3) hull vertices: endpoints of every segment that has all points on
/// its left or on the segment itself.
inline std::set<Point> reference_hull_vertices(const std::vector<Point>& raw) {
  std::set<Point> uniq(raw.begin(), raw.end());
  std::vector<Point> p(uniq.begin(), uniq.end());
  std::set<Point> out;
  if (p.size() < 3) return uniq;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i == j) continue;
      bool edge = true;
      for (std::size_t k = 0; k < p.size() && edge; ++k) {
        const double c = (p[j].x - p[i].x) * (p[k].y - p[i].y) - (p[j].y - p[i].y) * (p[k].x - p[i].x);
        if (c < 0.0) edge = false;
        if (c == 0.0) {
          // collinear points must lie between the endpoints
          const double dot = (p[k].x - p[i].x) * (p[j].x - p[i].x) + (p[k].y - p[i].y) * (p[j].y - p[i].y);
          const double len = (p[j].x - p[i].x) * (p[j].x - p[i].x) + (p[j].y - p[i].y) * (p[j].y - p[i].y);
          if (dot < 0.0 || dot > len) edge = false;
        }
      }
      if (edge) {
        out.insert(p[i]);
        out.insert(p[j]);
      }
    }
  }
  if (out.empty()) {
    // every point collinear: the extremes
    out.insert(p.front());
    out.insert(p.back());
  }
  return out;
}

/// Even-odd ray casting towards +x.
inline bool ray_cast_inside(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

/// Gaussian blobs over a few frames plus uniform clutter, on integer pixels.
inline std::vector<Particle> random_particles(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> blobs(1, 4), frame(0, 3), coord(0, 59);
  std::normal_distribution<double> spread(0.0, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> centres;
  for (int b = blobs(rng); b > 0; --b) centres.push_back({double(coord(rng)), double(coord(rng))});
  std::vector<Particle> out;
  for (std::size_t i = 0; i < n; ++i) {
    Particle p;
    p.t = static_cast<std::size_t>(frame(rng));
    if (unit(rng) < 0.8) {
      const auto& c = centres[i % centres.size()];
      p.x = std::round(c.x + spread(rng));
      p.y = std::round(c.y + spread(rng));
    } else {
      p.x = coord(rng);
      p.y = coord(rng);
    }
    out.push_back(p);
  }
  return out;
}

/// Relative path -> contents for every regular file under root.
inline std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    files[std::filesystem::relative(e.path(), root).generic_string()] =
        std::string(std::istreambuf_iterator<char>(is), {});
  }
  return files;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

struct CliResult {
  int status = 0;
  std::string out;
  std::string err;
};

inline CliResult steer(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = run(args, out, err);
  return {status, out.str(), err.str()};
}

/// Empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("attsteer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace attsteer::testing
