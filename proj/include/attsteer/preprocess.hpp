#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "attsteer/image.hpp"
#include "attsteer/tensor.hpp"

namespace attsteer {

struct TelemetrySample {
  double timestamp = 0.0;     // seconds
  double steering_deg = 0.0;  // steering command
  double velocity_mps = 0.0;
};

/// Ackermann constants: steering ratio K_s, slip coefficient K_slip (s^2/m^2)
/// and wheelbase d_w (m).
struct VehicleParams {
  double steering_ratio = 16.0;
  double slip = 0.004;
  double wheelbase = 2.7;

  void validate() const;
};

struct SmoothingConfig {
  double alpha_s = 0.05;
  bool enabled = true;

  void validate() const;
};

/// One model-ready frame: HSV pixels in [0,1] with the regression target.
struct ProcessedFrame {
  Tensor pixels;            // [H, W, 3]
  double timestamp = 0.0;
  double u = 0.0;           // inverse turning radius target, 1/m
  double v_hat = 0.0;       // smoothed velocity, m/s
  double theta_hat = 0.0;   // smoothed steering, degrees
  std::size_t index = 0;    // position in the source sequence
};

/// Linear interpolation of every field at each query time; queries outside
/// [first, last] are rejected.
std::vector<TelemetrySample> interpolate_telemetry(std::span<const TelemetrySample> samples,
                                                   std::span<const double> query_times);

/// Simple exponential smoothing, initialised at the first raw value.
std::vector<double> smooth_series(std::span<const double> values, const SmoothingConfig& config);

/// theta = u * d_w * K_s * (1 + K_slip * v^2)
double theta_from_u(double u, double v, const VehicleParams& params);
double u_from_theta(double theta_deg, double v, const VehicleParams& params);

/// Center-crops to the target aspect ratio, then nearest-neighbour resamples
/// (source index = floor(dst * src_extent / dst_extent)).
Image crop_resize(const Image& image, std::size_t target_height = 80,
                  std::size_t target_width = 160);

/// Hexcone HSV, every channel scaled to [0,1]; hue of achromatic pixels is 0.
std::array<double, 3> rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v);

/// RGB bytes -> [H, W, 3] HSV tensor.
Tensor hsv_normalize(const Image& rgb);
/// [H, W, 3] HSV tensor -> RGB bytes.
Image hsv_to_rgb_image(const Tensor& hsv);

/// Drops frames whose smoothed velocity is below min_speed; order preserved.
std::vector<ProcessedFrame> filter_stopped(std::vector<ProcessedFrame> frames,
                                           double min_speed = 1.0);

}  // namespace attsteer
