#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attsteer/model.hpp"
#include "attsteer/preprocess.hpp"

namespace attsteer {

struct SaliencyConfig {
  std::size_t particles = 500;  // per frame
  double eps = 5.0;             // DBSCAN radius in (x, y, time_scale * t) units
  std::size_t min_pts = 5;      // neighbours within eps, the point itself included
  double time_scale = 4.0;      // px per frame
  double tau_causal = 0.1;      // degrees of MAE increase
  std::size_t warp_size = 64;
  std::size_t upsample = 8;
  double blur_sigma = 4.0;
  std::size_t blur_radius = 8;

  void validate() const;
};

/// Non-negative heat map at input resolution, row-major.
struct AttentionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  double timestamp = 0.0;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Reshape to the grid, nearest-neighbour upsample, then a clamped-border
/// separable Gaussian with a normalised kernel.
AttentionMap build_map(std::span<const double> alpha, std::size_t grid_height,
                       std::size_t grid_width, const SaliencyConfig& config);

std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

struct Particle {
  double x = 0.0;  // column
  double y = 0.0;  // row
  std::size_t t = 0;
};

/// For each map t, config.particles pixel positions drawn with replacement
/// in proportion to the map values.
std::vector<Particle> sample_particles(std::span<const AttentionMap> maps,
                                       const SaliencyConfig& config, std::uint64_t seed);

inline constexpr int kNoise = -1;

/// DBSCAN labels (kNoise or cluster id from 0) over (x, y, time_scale * t).
/// Clusters are numbered in order of their lowest-index core point; a border
/// point reachable from several clusters joins the lowest id.
std::vector<int> dbscan(std::span<const Particle> particles, const SaliencyConfig& config);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};
using Polygon = std::vector<Point>;

/// Monotone chain; counter-clockwise in (x, y), collinear points dropped.
Polygon convex_hull(std::vector<Point> points);

/// convex_hull, or when fewer than 3 vertices remain, the hull of every
/// point shifted by (+-2, +-1) and (+-1, +-2), clamped to the frame.
Polygon robust_hull(const std::vector<Point>& points, std::size_t width, std::size_t height);

/// Inside or on the boundary of a convex polygon (half-plane test).
bool inside_polygon(const Polygon& hull, double x, double y);

/// Pixels (x, y) of a width x height frame inside or on the hull.
std::vector<std::pair<std::size_t, std::size_t>> hull_pixels(const Polygon& hull, std::size_t width,
                                                              std::size_t height);

struct SaliencyCluster {
  int id = 0;
  std::vector<std::size_t> members;       // particle indices
  std::size_t first_frame = 0;            // inclusive, window-relative
  std::size_t last_frame = 0;             // inclusive
  std::map<std::size_t, Polygon> hulls;   // per frame holding members
};

struct Clustering {
  std::vector<SaliencyCluster> clusters;
  std::vector<std::size_t> noise;
};

Clustering cluster_particles(std::span<const Particle> particles, std::size_t width,
                             std::size_t height, const SaliencyConfig& config);

/// Zeroes every channel of the pixels inside or on the hull.
ProcessedFrame mask_blob(const ProcessedFrame& frame, const Polygon& hull);

/// Bounding box of the hull resampled bilinearly to size x size.
Tensor warp_saliency(const ProcessedFrame& frame, const Polygon& hull, std::size_t size = 64);

struct CausalEffect {
  double baseline_mae = 0.0;
  double masked_mae = 0.0;
  double delta = 0.0;  // masked - baseline, degrees
};

/// Reruns the whole window with the cluster's hulls masked in the frames it
/// spans and compares MAE over the span.
CausalEffect causal_effect(std::span<const ProcessedFrame> window, const SaliencyCluster& cluster,
                           const SteeringModel& model, const VehicleParams& vehicle);

enum class Verdict { causal, spurious };
std::string to_string(Verdict v);

struct ClusterReport {
  SaliencyCluster cluster;
  CausalEffect effect;
  Verdict verdict = Verdict::spurious;
};

struct CausalReport {
  std::size_t window_id = 0;
  std::vector<ClusterReport> clusters;
  double spurious_fraction = 0.0;
};

/// verdict causal iff delta > tau; spurious fraction over all clusters.
CausalReport filter_blobs(std::size_t window_id, std::vector<SaliencyCluster> clusters,
                          const std::vector<CausalEffect>& effects, double tau_causal);

struct WindowAnalysis {
  std::vector<AttentionMap> maps;
  std::vector<Particle> particles;
  Clustering clustering;
  CausalReport report;
};

/// Attention maps, particles, clusters and causal verdicts for one window.
WindowAnalysis analyze_window(std::span<const ProcessedFrame> window, std::size_t window_id,
                              const AttentionSteeringModel& model, const SaliencyConfig& config,
                              const VehicleParams& vehicle, std::uint64_t seed);

/// One JSON object per cluster followed by a summary object for the window.
std::vector<std::string> report_json_lines(const CausalReport& report);

}  // namespace attsteer
