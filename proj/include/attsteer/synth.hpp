#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "attsteer/dataset.hpp"
#include "attsteer/image.hpp"
#include "attsteer/preprocess.hpp"

namespace attsteer {

/// Procedural road scene. Rows below `horizon` show a gray road with two
/// white lane markings whose centre line at normalised depth s (0 at the
/// horizon, 1 at the bottom row) is W/2 + u * bend_gain * (1 - s).
/// Bright rectangles appear only above the horizon and are driven by their
/// own random stream.
struct SceneParams {
  std::uint64_t seed = 0;
  std::size_t frames = 2000;
  std::size_t height = 80;
  std::size_t width = 160;
  std::size_t horizon = 30;
  double frame_rate = 20.0;      // Hz
  double telemetry_rate = 40.0;  // Hz, integer multiple of frame_rate

  // curvature: critically damped OU, du = w dt,
  // dw = -(2 r w + r^2 u) dt + volatility dW with r = reversion; clamped to
  // |u| <= clamp. Stationary sd of u is volatility / (2 r^1.5).
  double reversion = 0.3;       // 1/s
  double volatility = 0.0066;   // (1/m)/s^1.5
  double clamp = 0.05;          // 1/m
  double bend_gain = 600.0;   // px per (1/m) at the horizon

  double lane_width = 110.0;     // px between markings at the bottom row
  double lane_width_far = 12.0;  // px at the horizon

  // velocity: OU around mean_speed, clamped to [min_speed, max_speed]
  double mean_speed = 20.0;
  double speed_sd = 2.0;
  double speed_reversion = 0.1;
  double min_speed = 5.0;
  double max_speed = 35.0;

  double steering_noise_deg = 0.05;
  double velocity_noise = 0.05;

  double distractor_rate = 0.05;  // spawn probability per frame
  std::size_t max_distractors = 3;
  std::size_t distractor_life_min = 30;
  std::size_t distractor_life_max = 80;

  VehicleParams vehicle;

  void validate() const;
};

struct SyntheticSequence {
  std::vector<Image> frames;  // RGB
  std::vector<FrameEntry> entries;
  std::vector<TelemetrySample> telemetry;
  std::vector<double> u;          // ground truth per frame, 1/m
  std::vector<double> theta_deg;  // ground truth per frame
  std::vector<double> velocity;   // ground truth per frame
  std::vector<Image> lane_masks;        // 1 channel, 255 on marking pixels
  std::vector<Image> distractor_masks;  // 1 channel, 255 on distractor pixels
};

SyntheticSequence generate_sequence(const SceneParams& params);

/// Writes frames/, frames.csv, telemetry.csv, ground_truth.csv and masks/.
void write_sequence(const std::filesystem::path& dir, const SyntheticSequence& seq);

/// Mask file names: masks/frame_%06d_lane.pgm, masks/frame_%06d_distractor.pgm.
std::filesystem::path lane_mask_path(const std::filesystem::path& dir, std::size_t index);
std::filesystem::path distractor_mask_path(const std::filesystem::path& dir, std::size_t index);

/// Recovers u from the white marking pixels of the rows covered by the lane
/// mask. Returns nullopt when the markings are missing from the frame.
std::optional<double> oracle_controller(const Image& frame, const Image& lane_mask,
                                        const SceneParams& params);

}  // namespace attsteer
