#include "attsteer/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <fstream>

#include "attsteer/rng.hpp"

namespace attsteer {

namespace {

enum Stream : std::uint64_t { curvature = 1, speed = 2, sensor = 3, distractor = 4, texture = 5 };

struct RowGeometry {
  double centre = 0.0;     // lane centre, px
  double half_width = 0.0; // centre to marking centre, px
  double half_mark = 0.0;  // marking half thickness, px
  double gain = 0.0;       // d centre / d u
};

RowGeometry row_geometry(std::size_t row, double u, const SceneParams& p) {
  const double s = static_cast<double>(row - p.horizon) / static_cast<double>(p.height - 1 - p.horizon);
  RowGeometry g;
  g.gain = p.bend_gain * (1.0 - s);
  g.centre = static_cast<double>(p.width) / 2.0 + u * g.gain;
  g.half_width = (p.lane_width_far + (p.lane_width - p.lane_width_far) * s) / 2.0;
  g.half_mark = 1.0 + s;
  return g;
}

bool on_marking(std::size_t x, double marking_centre, double half_mark) {
  return std::abs(static_cast<double>(x) + 0.5 - marking_centre) <= half_mark;
}

// Exact OU transition over dt.
double ou_step(double x, double mean, double rate, double vol, double dt, double z) {
  if (rate <= 0.0) return x + vol * std::sqrt(dt) * z;
  const double decay = std::exp(-rate * dt);
  return mean + (x - mean) * decay + vol * std::sqrt((1.0 - decay * decay) / (2.0 * rate)) * z;
}

struct Distractor {
  double x = 0.0;
  double dx = 0.0;
  std::size_t y = 0, w = 0, h = 0;
  std::array<std::uint8_t, 3> color{};
  std::size_t life = 0;
};

constexpr std::array<std::array<std::uint8_t, 3>, 5> kPalette{{
    {255, 220, 0}, {255, 60, 60}, {250, 250, 250}, {255, 0, 255}, {0, 255, 255}}};

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void render_frame(Image& img, Image& lane, Image& dist, double u, const std::vector<Distractor>& ds,
                  const SceneParams& p, std::uint64_t frame_index) {
  Rng tex = make_rng(p.seed, texture, frame_index);
  std::uniform_real_distribution<double> jitter(-25.0, 25.0);
  for (std::size_t y = 0; y < p.height; ++y) {
    if (y < p.horizon) {
      const double k = static_cast<double>(y) / static_cast<double>(p.horizon);
      for (std::size_t x = 0; x < p.width; ++x) {
        img.at(y, x, 0) = clamp_byte(70 + 40 * k);
        img.at(y, x, 1) = clamp_byte(110 + 40 * k);
        img.at(y, x, 2) = clamp_byte(190 + 20 * k);
      }
      continue;
    }
    const auto g = row_geometry(y, u, p);
    const double road_half = g.half_width * 1.25 + 2.0;
    for (std::size_t x = 0; x < p.width; ++x) {
      const double n = jitter(tex);
      const double dx = std::abs(static_cast<double>(x) + 0.5 - g.centre);
      if (on_marking(x, g.centre - g.half_width, g.half_mark) ||
          on_marking(x, g.centre + g.half_width, g.half_mark)) {
        img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = 255;
        lane.at(y, x, 0) = 255;
      } else if (dx <= road_half) {
        const auto v = clamp_byte(105 + n);
        img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
      } else {
        img.at(y, x, 0) = clamp_byte(45 + 0.4 * n);
        img.at(y, x, 1) = clamp_byte(115 + n);
        img.at(y, x, 2) = clamp_byte(45 + 0.4 * n);
      }
    }
  }
  for (const auto& d : ds) {
    const auto left = static_cast<std::size_t>(std::clamp(std::lround(d.x), 0L, static_cast<long>(p.width)));
    const std::size_t right = std::min(p.width, left + d.w);
    for (std::size_t y = d.y; y < std::min(p.horizon, d.y + d.h); ++y) {
      for (std::size_t x = left; x < right; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = d.color[c];
        dist.at(y, x, 0) = 255;
      }
    }
  }
}

}  // namespace

void SceneParams::validate() const {
  if (frames == 0) throw std::invalid_argument("scene needs at least one frame");
  if (height < 8 || width < 8 || horizon + 2 >= height) {
    throw std::invalid_argument("scene extents leave no road below the horizon");
  }
  if (!(frame_rate > 0.0) || !(telemetry_rate >= frame_rate)) {
    throw std::invalid_argument("telemetry rate must be positive and at least the frame rate");
  }
  const double ratio = telemetry_rate / frame_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw std::invalid_argument("telemetry rate must be an integer multiple of the frame rate");
  }
  if (reversion < 0.0 || volatility < 0.0 || !(clamp > 0.0) || clamp > 0.1) {
    throw std::invalid_argument("curvature process needs reversion, volatility >= 0 and 0 < clamp <= 0.1");
  }
  if (!(min_speed > 0.0) || min_speed > mean_speed || mean_speed > max_speed) {
    throw std::invalid_argument("speed profile needs 0 < min <= mean <= max");
  }
  if (distractor_rate < 0.0 || distractor_rate > 1.0) {
    throw std::invalid_argument("distractor rate must be in [0, 1]");
  }
  if (distractor_life_min == 0 || distractor_life_min > distractor_life_max) {
    throw std::invalid_argument("distractor lifetime range is empty");
  }
  vehicle.validate();
}

SyntheticSequence generate_sequence(const SceneParams& p) {
  p.validate();
  const auto ratio = static_cast<std::size_t>(std::lround(p.telemetry_rate / p.frame_rate));
  const double dt = 1.0 / p.telemetry_rate;
  const std::size_t ticks = (p.frames + 1) * ratio + 1;

  Rng curve_rng = make_rng(p.seed, curvature);
  Rng speed_rng = make_rng(p.seed, speed);
  Rng sensor_rng = make_rng(p.seed, sensor);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> u(ticks), v(ticks);
  const double speed_vol = p.speed_sd * std::sqrt(2.0 * p.speed_reversion);
  const double r = p.reversion;
  const double u_sd = r > 0.0 ? p.volatility / (2.0 * std::pow(r, 1.5)) : 0.0;
  u[0] = std::clamp(u_sd * normal(curve_rng), -p.clamp, p.clamp);
  double w = r * u_sd * normal(curve_rng);
  v[0] = std::clamp(p.mean_speed + p.speed_sd * normal(speed_rng), p.min_speed, p.max_speed);
  for (std::size_t k = 1; k < ticks; ++k) {
    w += -(2.0 * r * w + r * r * u[k - 1]) * dt + p.volatility * std::sqrt(dt) * normal(curve_rng);
    u[k] = u[k - 1] + w * dt;
    if (std::abs(u[k]) > p.clamp) {
      u[k] = std::clamp(u[k], -p.clamp, p.clamp);
      w = 0.0;
    }
    v[k] = std::clamp(ou_step(v[k - 1], p.mean_speed, p.speed_reversion, speed_vol, dt, normal(speed_rng)),
                      p.min_speed, p.max_speed);
  }

  SyntheticSequence seq;
  seq.telemetry.reserve(ticks);
  for (std::size_t k = 0; k < ticks; ++k) {
    const double theta = theta_from_u(u[k], v[k], p.vehicle) + p.steering_noise_deg * normal(sensor_rng);
    const double vel = std::max(0.0, v[k] + p.velocity_noise * normal(sensor_rng));
    seq.telemetry.push_back({static_cast<double>(k) * dt, theta, vel});
  }

  Rng dist_rng = make_rng(p.seed, distractor);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Distractor> active;
  for (std::size_t i = 1; i <= p.frames; ++i) {
    // advance the distractor process (independent of the curvature stream)
    for (auto& d : active) {
      d.x += d.dx;
      --d.life;
    }
    std::erase_if(active, [](const Distractor& d) { return d.life == 0; });
    if (unit(dist_rng) < p.distractor_rate && active.size() < p.max_distractors) {
      Distractor d;
      d.w = std::min<std::size_t>(p.width, 28 + static_cast<std::size_t>(unit(dist_rng) * 21));
      d.h = std::min<std::size_t>(p.horizon - 2, 12 + static_cast<std::size_t>(unit(dist_rng) * 9));
      d.y = 1 + static_cast<std::size_t>(unit(dist_rng) * static_cast<double>(p.horizon - 1 - d.h));
      d.x = unit(dist_rng) * static_cast<double>(p.width - d.w);
      d.dx = (unit(dist_rng) - 0.5);
      d.color = kPalette[static_cast<std::size_t>(unit(dist_rng) * kPalette.size()) % kPalette.size()];
      d.life = p.distractor_life_min +
               static_cast<std::size_t>(unit(dist_rng) *
                                        static_cast<double>(p.distractor_life_max - p.distractor_life_min + 1));
      d.life = std::min(d.life, p.distractor_life_max);
      active.push_back(d);
    }

    const std::size_t k = i * ratio;
    Image img(p.height, p.width, 3), lane(p.height, p.width, 1), dist(p.height, p.width, 1);
    render_frame(img, lane, dist, u[k], active, p, i);
    seq.frames.push_back(std::move(img));
    seq.lane_masks.push_back(std::move(lane));
    seq.distractor_masks.push_back(std::move(dist));
    seq.entries.push_back({i, static_cast<double>(k) * dt});
    seq.u.push_back(u[k]);
    seq.velocity.push_back(v[k]);
    seq.theta_deg.push_back(theta_from_u(u[k], v[k], p.vehicle));
  }
  return seq;
}

std::filesystem::path lane_mask_path(const std::filesystem::path& dir, std::size_t index) {
  return dir / "masks" / (frame_stem(index) + "_lane.pgm");
}

std::filesystem::path distractor_mask_path(const std::filesystem::path& dir, std::size_t index) {
  return dir / "masks" / (frame_stem(index) + "_distractor.pgm");
}

void write_sequence(const std::filesystem::path& dir, const SyntheticSequence& seq) {
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "masks");
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    const std::size_t index = seq.entries[k].index;
    write_pnm(dir / "frames" / (frame_stem(index) + ".ppm"), seq.frames[k]);
    write_pnm(lane_mask_path(dir, index), seq.lane_masks[k]);
    write_pnm(distractor_mask_path(dir, index), seq.distractor_masks[k]);
  }
  write_frames_csv(dir / "frames.csv", seq.entries);
  write_telemetry_csv(dir / "telemetry.csv", seq.telemetry);
  std::ofstream gt(dir / "ground_truth.csv", std::ios::binary);
  if (!gt) throw DatasetError("cannot write " + (dir / "ground_truth.csv").string());
  gt << "index,u,theta_deg,velocity_mps\n";
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    gt << seq.entries[k].index << ',' << format_real(seq.u[k]) << ',' << format_real(seq.theta_deg[k])
       << ',' << format_real(seq.velocity[k]) << '\n';
  }
}

std::optional<double> oracle_controller(const Image& frame, const Image& lane_mask,
                                        const SceneParams& p) {
  if (frame.height != p.height || frame.width != p.width || lane_mask.height != p.height ||
      lane_mask.width != p.width) {
    throw std::invalid_argument("oracle_controller: frame/mask extents do not match the scene");
  }
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double half_w = static_cast<double>(p.width) / 2.0;
  for (std::size_t y = p.horizon; y < p.height; ++y) {
    bool masked_row = false;
    for (std::size_t x = 0; x < p.width && !masked_row; ++x) masked_row = lane_mask.at(y, x, 0) != 0;
    if (!masked_row) continue;
    const auto g = row_geometry(y, 0.0, p);
    if (g.gain < 1e-9) continue;
    auto white = [&](std::size_t x) {
      return frame.at(y, x, 0) == 255 && frame.at(y, x, 1) == 255 && frame.at(y, x, 2) == 255;
    };
    std::size_t x = 0;
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    while (x < p.width) {
      if (!white(x)) {
        ++x;
        continue;
      }
      std::size_t b = x;
      while (b + 1 < p.width && white(b + 1)) ++b;
      runs.emplace_back(x, b);
      x = b + 1;
    }
    if (runs.size() != 2) continue;  // markings merged or missing in this row
    for (std::size_t k = 0; k < 2; ++k) {
      const auto [a, b] = runs[k];
      if (a == 0 || b + 1 == p.width) continue;  // clipped by the frame border
      const double m = g.half_mark;
      const double da = static_cast<double>(a), db = static_cast<double>(b);
      // interval of marking centres that paint exactly [a, b]
      const double c_lo = std::max(da - 0.5 + m, db + 0.5 - m);
      const double c_hi = std::min(da + 0.5 + m, db + 1.5 - m);
      const double offset = k == 0 ? -g.half_width : g.half_width;
      lo = std::max(lo, (c_lo - half_w - offset) / g.gain);
      hi = std::min(hi, (c_hi - half_w - offset) / g.gain);
      ++used;
    }
  }
  if (used == 0) return std::nullopt;
  if (lo > hi + 1e-9) return std::nullopt;
  return 0.5 * (lo + hi);
}

}  // namespace attsteer
