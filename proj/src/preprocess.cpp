#include "attsteer/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace attsteer {

void VehicleParams::validate() const {
  if (!(wheelbase > 0.0) || !(steering_ratio > 0.0) || !(slip >= 0.0)) {
    throw std::invalid_argument("vehicle params need d_w > 0, K_s > 0, K_slip >= 0");
  }
}

void SmoothingConfig::validate() const {
  if (!(alpha_s >= 0.0 && alpha_s <= 1.0)) {
    throw std::invalid_argument("smoothing factor must lie in [0, 1]");
  }
}

std::vector<TelemetrySample> interpolate_telemetry(std::span<const TelemetrySample> samples,
                                                   std::span<const double> query_times) {
  if (samples.size() < 2) throw std::invalid_argument("interpolation needs at least 2 samples");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].timestamp > samples[i - 1].timestamp)) {
      throw std::invalid_argument("telemetry timestamps must be strictly increasing");
    }
  }
  std::vector<TelemetrySample> out;
  out.reserve(query_times.size());
  for (double t : query_times) {
    if (t < samples.front().timestamp || t > samples.back().timestamp) {
      throw std::out_of_range("query time " + std::to_string(t) + " outside telemetry range [" +
                              std::to_string(samples.front().timestamp) + ", " +
                              std::to_string(samples.back().timestamp) + "]");
    }
    auto hi = std::lower_bound(samples.begin(), samples.end(), t,
                               [](const TelemetrySample& s, double q) { return s.timestamp < q; });
    if (hi->timestamp == t) {
      out.push_back(*hi);
      continue;
    }
    auto lo = hi - 1;
    const double w = (t - lo->timestamp) / (hi->timestamp - lo->timestamp);
    out.push_back({t, lo->steering_deg + w * (hi->steering_deg - lo->steering_deg),
                   lo->velocity_mps + w * (hi->velocity_mps - lo->velocity_mps)});
  }
  return out;
}

std::vector<double> smooth_series(std::span<const double> values, const SmoothingConfig& config) {
  config.validate();
  std::vector<double> out(values.begin(), values.end());
  if (!config.enabled || out.empty()) return out;
  const double a = config.alpha_s;
  for (std::size_t t = 1; t < out.size(); ++t) {
    out[t] = a * values[t] + (1.0 - a) * out[t - 1];
  }
  return out;
}

double theta_from_u(double u, double v, const VehicleParams& p) {
  return u * p.wheelbase * p.steering_ratio * (1.0 + p.slip * v * v);
}

double u_from_theta(double theta_deg, double v, const VehicleParams& p) {
  return theta_deg / (p.wheelbase * p.steering_ratio * (1.0 + p.slip * v * v));
}

Image crop_resize(const Image& image, std::size_t target_height, std::size_t target_width) {
  if (image.height < target_height || image.width < target_width) {
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " is smaller than the target " +
                                std::to_string(target_height) + "x" +
                                std::to_string(target_width));
  }
  // crop window with the target aspect ratio
  std::size_t crop_h = image.height;
  std::size_t crop_w = image.width;
  if (image.height * target_width > image.width * target_height) {
    crop_h = image.width * target_height / target_width;
  } else if (image.height * target_width < image.width * target_height) {
    crop_w = image.height * target_width / target_height;
  }
  const std::size_t top = (image.height - crop_h) / 2;
  const std::size_t left = (image.width - crop_w) / 2;

  Image out(target_height, target_width, image.channels);
  for (std::size_t y = 0; y < target_height; ++y) {
    const std::size_t sy = top + y * crop_h / target_height;
    for (std::size_t x = 0; x < target_width; ++x) {
      const std::size_t sx = left + x * crop_w / target_width;
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

std::array<double, 3> rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = (g - b) / delta;
      if (h < 0.0) h += 6.0;
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h /= 6.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = (h >= 1.0 ? 0.0 : h) * 6.0;
  const auto sector = static_cast<int>(std::floor(hh));
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto to8 = [](double x) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(x * 255.0), 0L, 255L));
  };
  return {to8(r), to8(g), to8(b)};
}

Tensor hsv_normalize(const Image& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("hsv_normalize expects an RGB image");
  Tensor out(Shape{rgb.height, rgb.width, 3});
  float* o = out.data();
  for (std::size_t i = 0; i < rgb.height * rgb.width; ++i) {
    const auto hsv = rgb_to_hsv(rgb.pixels[3 * i], rgb.pixels[3 * i + 1], rgb.pixels[3 * i + 2]);
    for (std::size_t c = 0; c < 3; ++c) o[3 * i + c] = static_cast<float>(hsv[c]);
  }
  return out;
}

Image hsv_to_rgb_image(const Tensor& hsv) {
  if (hsv.rank() != 3 || hsv.dim(2) != 3) {
    throw ShapeError("hsv_to_rgb_image expects [H, W, 3], got " + to_string(hsv.shape()));
  }
  Image out(hsv.dim(0), hsv.dim(1), 3);
  for (std::size_t i = 0; i < out.height * out.width; ++i) {
    const auto rgb = hsv_to_rgb(hsv[3 * i], hsv[3 * i + 1], hsv[3 * i + 2]);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[3 * i + c] = rgb[c];
  }
  return out;
}

std::vector<ProcessedFrame> filter_stopped(std::vector<ProcessedFrame> frames, double min_speed) {
  std::erase_if(frames, [&](const ProcessedFrame& f) { return f.v_hat < min_speed; });
  return frames;
}

}  // namespace attsteer
