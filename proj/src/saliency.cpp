#include "attsteer/saliency.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "attsteer/rng.hpp"

namespace attsteer {

void SaliencyConfig::validate() const {
  if (particles == 0) throw std::invalid_argument("particle count must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("DBSCAN eps must be positive");
  if (min_pts == 0) throw std::invalid_argument("DBSCAN minPts must be >= 1");
  if (!(time_scale > 0.0)) throw std::invalid_argument("time scale must be positive");
  if (!std::isfinite(tau_causal)) throw std::invalid_argument("tau_causal must be finite");
  if (warp_size == 0 || upsample == 0) throw std::invalid_argument("warp size and upsample must be positive");
  if (!(blur_sigma > 0.0)) throw std::invalid_argument("blur sigma must be positive");
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

AttentionMap build_map(std::span<const double> alpha, std::size_t grid_height,
                       std::size_t grid_width, const SaliencyConfig& config) {
  if (alpha.size() != grid_height * grid_width) {
    throw ShapeError("attention of length " + std::to_string(alpha.size()) + " does not fit a " +
                     std::to_string(grid_height) + "x" + std::to_string(grid_width) + " grid");
  }
  const std::size_t f = config.upsample;
  const std::size_t H = grid_height * f, W = grid_width * f;
  std::vector<double> up(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) up[y * W + x] = alpha[(y / f) * grid_width + x / f];
  }
  const auto k = gaussian_kernel(config.blur_sigma, config.blur_radius);
  const auto r = static_cast<std::ptrdiff_t>(config.blur_radius);
  auto clamp_index = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        s += k[static_cast<std::size_t>(d + r)] * up[y * W + clamp_index(static_cast<std::ptrdiff_t>(x) + d, W)];
      }
      tmp[y * W + x] = s;
    }
  }
  AttentionMap map{H, W, std::vector<double>(H * W, 0.0), 0.0};
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        s += k[static_cast<std::size_t>(d + r)] * tmp[clamp_index(static_cast<std::ptrdiff_t>(y) + d, H) * W + x];
      }
      map.values[y * W + x] = s;
    }
  }
  return map;
}

std::vector<Particle> sample_particles(std::span<const AttentionMap> maps,
                                       const SaliencyConfig& config, std::uint64_t seed) {
  if (maps.empty()) throw std::invalid_argument("sample_particles needs at least one map");
  std::vector<Particle> out;
  out.reserve(maps.size() * config.particles);
  for (std::size_t t = 0; t < maps.size(); ++t) {
    const auto& m = maps[t];
    std::vector<double> cdf(m.values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      if (m.values[i] < 0.0) throw std::invalid_argument("attention map has negative values");
      total += m.values[i];
      cdf[i] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("attention map " + std::to_string(t) + " has zero mass");
    Rng rng = make_rng(seed, 30, t);
    std::uniform_real_distribution<double> draw(0.0, total);
    for (std::size_t n = 0; n < config.particles; ++n) {
      const double r = draw(rng);
      auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
      std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
      if (idx >= cdf.size()) idx = cdf.size() - 1;
      // skip zero-mass cells that upper_bound can land on through rounding
      while (m.values[idx] == 0.0 && idx > 0) --idx;
      out.push_back({static_cast<double>(idx % m.width), static_cast<double>(idx / m.width), t});
    }
  }
  return out;
}

namespace {

struct Cell {
  std::int64_t x, y, z;
  bool operator==(const Cell&) const = default;
};
struct CellHash {
  std::size_t operator()(const Cell& c) const noexcept {
    return static_cast<std::size_t>(mix_seed(static_cast<std::uint64_t>(c.x) * 73856093ULL ^
                                             static_cast<std::uint64_t>(c.y) * 19349663ULL ^
                                             static_cast<std::uint64_t>(c.z) * 83492791ULL));
  }
};

// Uniform grid with cell size eps; neighbours come back in ascending index.
class NeighbourIndex {
 public:
  NeighbourIndex(std::span<const Particle> pts, const SaliencyConfig& c) : pts_(pts), c_(c) {
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[cell_of(i)].push_back(i);
  }

  void query(std::size_t i, std::vector<std::size_t>& out) const {
    out.clear();
    const Cell c = cell_of(i);
    const double e2 = c_.eps * c_.eps;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(Cell{c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (auto j : it->second) {
            if (dist2(i, j) <= e2) out.push_back(j);
          }
        }
      }
    }
    std::sort(out.begin(), out.end());
  }

 private:
  double z(std::size_t i) const { return c_.time_scale * static_cast<double>(pts_[i].t); }
  Cell cell_of(std::size_t i) const {
    return Cell{static_cast<std::int64_t>(std::floor(pts_[i].x / c_.eps)),
                static_cast<std::int64_t>(std::floor(pts_[i].y / c_.eps)),
                static_cast<std::int64_t>(std::floor(z(i) / c_.eps))};
  }
  double dist2(std::size_t i, std::size_t j) const {
    const double dx = pts_[i].x - pts_[j].x, dy = pts_[i].y - pts_[j].y, dz = z(i) - z(j);
    return dx * dx + dy * dy + dz * dz;
  }

  std::span<const Particle> pts_;
  const SaliencyConfig& c_;
  std::unordered_map<Cell, std::vector<std::size_t>, CellHash> cells_;
};

}  // namespace

std::vector<int> dbscan(std::span<const Particle> particles, const SaliencyConfig& config) {
  config.validate();
  constexpr int kUnvisited = -2;
  std::vector<int> label(particles.size(), kUnvisited);
  NeighbourIndex index(particles, config);
  std::vector<std::size_t> nb, nb2;
  int next = 0;
  for (std::size_t i = 0; i < particles.size(); ++i) {
    if (label[i] != kUnvisited) continue;
    index.query(i, nb);
    if (nb.size() < config.min_pts) {
      label[i] = kNoise;  // may be claimed as a border point later
      continue;
    }
    const int id = next++;
    label[i] = id;
    std::deque<std::size_t> frontier(nb.begin(), nb.end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (label[j] == kNoise) label[j] = id;
      if (label[j] != kUnvisited) continue;
      label[j] = id;
      index.query(j, nb2);
      if (nb2.size() >= config.min_pts) frontier.insert(frontier.end(), nb2.begin(), nb2.end());
    }
  }
  return label;
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

Polygon convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Polygon h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0.0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(h[k - 2], h[k - 1], pts[i]) <= 0.0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

Polygon robust_hull(const std::vector<Point>& points, std::size_t width, std::size_t height) {
  Polygon h = convex_hull(points);
  if (h.size() >= 3) return h;
  static constexpr std::array<std::array<double, 2>, 8> kOctagon{
      {{2, 1}, {1, 2}, {-1, 2}, {-2, 1}, {-2, -1}, {-1, -2}, {1, -2}, {2, -1}}};
  std::vector<Point> grown;
  for (const auto& p : h) {
    for (const auto& o : kOctagon) {
      grown.push_back({std::clamp(p.x + o[0], 0.0, static_cast<double>(width - 1)),
                       std::clamp(p.y + o[1], 0.0, static_cast<double>(height - 1))});
    }
  }
  return convex_hull(std::move(grown));
}

bool inside_polygon(const Polygon& hull, double x, double y) {
  if (hull.empty()) return false;
  if (hull.size() == 1) return hull[0].x == x && hull[0].y == y;
  const Point p{x, y};
  if (hull.size() == 2) {
    const auto& a = hull[0];
    const auto& b = hull[1];
    return cross(a, b, p) == 0.0 && std::min(a.x, b.x) <= x && x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= y && y <= std::max(a.y, b.y);
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0.0) return false;
  }
  return true;
}

std::vector<std::pair<std::size_t, std::size_t>> hull_pixels(const Polygon& hull, std::size_t width,
                                                              std::size_t height) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (hull.empty()) return out;
  double x0 = hull[0].x, x1 = x0, y0 = hull[0].y, y1 = y0;
  for (const auto& p : hull) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::ceil(v))); };
  const std::size_t ya = lo(y0), xa = lo(x0);
  const std::size_t yb = std::min(height - 1, static_cast<std::size_t>(std::max(0.0, std::floor(y1))));
  const std::size_t xb = std::min(width - 1, static_cast<std::size_t>(std::max(0.0, std::floor(x1))));
  for (std::size_t y = ya; y <= yb && y1 >= 0.0; ++y) {
    for (std::size_t x = xa; x <= xb && x1 >= 0.0; ++x) {
      if (inside_polygon(hull, static_cast<double>(x), static_cast<double>(y))) out.emplace_back(x, y);
    }
  }
  return out;
}

Clustering cluster_particles(std::span<const Particle> particles, std::size_t width,
                             std::size_t height, const SaliencyConfig& config) {
  if (particles.empty()) throw std::invalid_argument("cluster_particles needs particles");
  const auto labels = dbscan(particles, config);
  Clustering out;
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  out.clusters.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kNoise) {
      out.noise.push_back(i);
      continue;
    }
    out.clusters[static_cast<std::size_t>(labels[i])].members.push_back(i);
  }
  for (std::size_t c = 0; c < out.clusters.size(); ++c) {
    auto& cl = out.clusters[c];
    cl.id = static_cast<int>(c);
    std::map<std::size_t, std::vector<Point>> per_frame;
    for (auto i : cl.members) per_frame[particles[i].t].push_back({particles[i].x, particles[i].y});
    cl.first_frame = per_frame.begin()->first;
    cl.last_frame = per_frame.rbegin()->first;
    for (auto& [t, pts] : per_frame) cl.hulls.emplace(t, robust_hull(pts, width, height));
  }
  return out;
}

ProcessedFrame mask_blob(const ProcessedFrame& frame, const Polygon& hull) {
  ProcessedFrame out = frame;
  const std::size_t H = frame.pixels.dim(0), W = frame.pixels.dim(1), C = frame.pixels.dim(2);
  for (auto [x, y] : hull_pixels(hull, W, H)) {
    for (std::size_t c = 0; c < C; ++c) out.pixels[(y * W + x) * C + c] = 0.0f;
  }
  return out;
}

Tensor warp_saliency(const ProcessedFrame& frame, const Polygon& hull, std::size_t size) {
  if (hull.empty() || size == 0) throw std::invalid_argument("warp_saliency needs a hull and a size");
  const std::size_t H = frame.pixels.dim(0), W = frame.pixels.dim(1), C = frame.pixels.dim(2);
  double x0 = hull[0].x, x1 = x0, y0 = hull[0].y, y1 = y0;
  for (const auto& p : hull) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double bx = std::floor(x0), by = std::floor(y0);
  const double bw = std::floor(x1) - bx + 1.0, bh = std::floor(y1) - by + 1.0;
  const double n = static_cast<double>(size);
  Tensor out(Shape{size, size, C});
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t c) {
    const auto yy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(H) - 1));
    const auto xx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(W) - 1));
    return static_cast<double>(frame.pixels[(yy * W + xx) * C + c]);
  };
  for (std::size_t i = 0; i < size; ++i) {
    const double sy = by + (static_cast<double>(i) + 0.5) * bh / n - 0.5;
    const double fy = std::floor(sy);
    const double wy = sy - fy;
    for (std::size_t j = 0; j < size; ++j) {
      const double sx = bx + (static_cast<double>(j) + 0.5) * bw / n - 0.5;
      const double fx = std::floor(sx);
      const double wx = sx - fx;
      const auto iy = static_cast<std::ptrdiff_t>(fy), ix = static_cast<std::ptrdiff_t>(fx);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = (1.0 - wx) * px(iy, ix, c) + wx * px(iy, ix + 1, c);
        const double bottom = (1.0 - wx) * px(iy + 1, ix, c) + wx * px(iy + 1, ix + 1, c);
        out[(i * size + j) * C + c] = static_cast<float>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

namespace {

double span_mae(std::span<const ProcessedFrame> window, const std::vector<double>& u_hat,
                std::size_t first, std::size_t last, const VehicleParams& vehicle) {
  double s = 0.0;
  for (std::size_t t = first; t <= last; ++t) {
    s += std::abs(theta_from_u(u_hat[t], window[t].v_hat, vehicle) - window[t].theta_hat);
  }
  return s / static_cast<double>(last - first + 1);
}

}  // namespace

CausalEffect causal_effect(std::span<const ProcessedFrame> window, const SaliencyCluster& cluster,
                           const SteeringModel& model, const VehicleParams& vehicle) {
  if (cluster.last_frame >= window.size() || cluster.first_frame > cluster.last_frame) {
    throw std::invalid_argument("cluster span lies outside the window");
  }
  std::vector<ProcessedFrame> masked(window.begin(), window.end());
  for (const auto& [t, hull] : cluster.hulls) masked[t] = mask_blob(masked[t], hull);
  const auto base = model.predict(window);
  const auto occluded = model.predict(masked);
  CausalEffect e;
  e.baseline_mae = span_mae(window, base, cluster.first_frame, cluster.last_frame, vehicle);
  e.masked_mae = span_mae(window, occluded, cluster.first_frame, cluster.last_frame, vehicle);
  e.delta = e.masked_mae - e.baseline_mae;
  return e;
}

std::string to_string(Verdict v) { return v == Verdict::causal ? "causal" : "spurious"; }

CausalReport filter_blobs(std::size_t window_id, std::vector<SaliencyCluster> clusters,
                          const std::vector<CausalEffect>& effects, double tau_causal) {
  if (clusters.size() != effects.size()) {
    throw std::invalid_argument("filter_blobs: one effect per cluster is required");
  }
  CausalReport r;
  r.window_id = window_id;
  std::size_t spurious = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const Verdict v = effects[i].delta > tau_causal ? Verdict::causal : Verdict::spurious;
    spurious += v == Verdict::spurious;
    r.clusters.push_back({std::move(clusters[i]), effects[i], v});
  }
  r.spurious_fraction = r.clusters.empty() ? 0.0 : static_cast<double>(spurious) /
                                                       static_cast<double>(r.clusters.size());
  return r;
}

WindowAnalysis analyze_window(std::span<const ProcessedFrame> window, std::size_t window_id,
                              const AttentionSteeringModel& model, const SaliencyConfig& config,
                              const VehicleParams& vehicle, std::uint64_t seed) {
  config.validate();
  WindowAnalysis a;
  const auto pred = model.attend(window);
  const auto& enc = model.config().encoder;
  for (std::size_t t = 0; t < window.size(); ++t) {
    a.maps.push_back(build_map(pred.alpha[t], enc.grid_height(), enc.grid_width(), config));
    a.maps.back().timestamp = window[t].timestamp;
  }
  a.particles = sample_particles(a.maps, config, seed);
  a.clustering = cluster_particles(a.particles, a.maps[0].width, a.maps[0].height, config);
  std::vector<CausalEffect> effects;
  for (const auto& c : a.clustering.clusters) effects.push_back(causal_effect(window, c, model, vehicle));
  a.report = filter_blobs(window_id, a.clustering.clusters, effects, config.tau_causal);
  return a;
}

std::vector<std::string> report_json_lines(const CausalReport& report) {
  using nlohmann::json;
  std::vector<std::string> lines;
  std::size_t spurious = 0;
  for (const auto& c : report.clusters) {
    json hulls = json::object();
    for (const auto& [t, hull] : c.cluster.hulls) {
      json verts = json::array();
      for (const auto& p : hull) verts.push_back({p.x, p.y});
      hulls[std::to_string(t)] = verts;
    }
    json rec{{"window_id", report.window_id},
             {"cluster_id", c.cluster.id},
             {"frame_span", {c.cluster.first_frame, c.cluster.last_frame}},
             {"hull_vertices", hulls},
             {"particles", c.cluster.members.size()},
             {"baseline_mae_deg", c.effect.baseline_mae},
             {"masked_mae_deg", c.effect.masked_mae},
             {"delta_mae_deg", c.effect.delta},
             {"verdict", to_string(c.verdict)}};
    spurious += c.verdict == Verdict::spurious;
    lines.push_back(rec.dump());
  }
  json summary{{"window_id", report.window_id},
               {"summary", true},
               {"clusters", report.clusters.size()},
               {"spurious", spurious},
               {"spurious_fraction", report.spurious_fraction}};
  lines.push_back(summary.dump());
  return lines;
}

}  // namespace attsteer
