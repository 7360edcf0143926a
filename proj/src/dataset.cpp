#include "attsteer/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace attsteer {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header, std::size_t columns) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DatasetError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw DatasetError(path.string() + ": expected header '" + header + "', got '" + line + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != columns) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<TelemetrySample> read_telemetry_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path, "timestamp,steering_deg,velocity_mps", 3);
  std::vector<TelemetrySample> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({parse_real(rows[i][0], path, i + 2), parse_real(rows[i][1], path, i + 2),
                   parse_real(rows[i][2], path, i + 2)});
  }
  return out;
}

void write_telemetry_csv(const std::filesystem::path& path,
                         const std::vector<TelemetrySample>& samples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << "timestamp,steering_deg,velocity_mps\n";
  for (const auto& s : samples) {
    os << format_real(s.timestamp) << ',' << format_real(s.steering_deg) << ','
       << format_real(s.velocity_mps) << '\n';
  }
}

std::vector<FrameEntry> read_frames_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path, "index,timestamp", 2);
  std::vector<FrameEntry> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double idx = parse_real(rows[i][0], path, i + 2);
    if (idx < 0 || idx != std::floor(idx)) {
      throw DatasetError(path.string() + ": frame index must be a non-negative integer");
    }
    out.push_back({static_cast<std::size_t>(idx), parse_real(rows[i][1], path, i + 2)});
  }
  return out;
}

void write_frames_csv(const std::filesystem::path& path, const std::vector<FrameEntry>& frames) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << "index,timestamp\n";
  for (const auto& f : frames) os << f.index << ',' << format_real(f.timestamp) << '\n';
}

std::string frame_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu", index);
  return buf;
}

std::filesystem::path find_frame_file(const std::filesystem::path& dir, std::size_t index) {
  const auto base = dir / "frames" / frame_stem(index);
  for (const char* ext : {".ppm", ".png"}) {
    auto p = base;
    p += ext;
    if (std::filesystem::exists(p)) return p;
  }
  throw DatasetError("missing image for frame " + std::to_string(index) + " under " +
                     (dir / "frames").string());
}

Dataset preprocess_sequence(const std::vector<Image>& frames,
                            const std::vector<FrameEntry>& entries,
                            const std::vector<TelemetrySample>& telemetry,
                            const PreprocessConfig& config) {
  config.vehicle.validate();
  config.smoothing.validate();
  if (frames.size() != entries.size()) throw DatasetError("frame list and index disagree");
  std::vector<double> times;
  times.reserve(entries.size());
  for (const auto& e : entries) times.push_back(e.timestamp);
  const auto aligned = interpolate_telemetry(telemetry, times);

  std::vector<double> theta, vel;
  for (const auto& s : aligned) {
    theta.push_back(s.steering_deg);
    vel.push_back(s.velocity_mps);
  }
  const auto theta_hat = smooth_series(theta, config.smoothing);
  const auto v_hat = smooth_series(vel, config.smoothing);

  Dataset ds;
  ds.source_frames = frames.size();
  std::vector<ProcessedFrame> processed;
  processed.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    ProcessedFrame f;
    f.pixels = hsv_normalize(crop_resize(frames[i], config.height, config.width));
    f.timestamp = entries[i].timestamp;
    f.theta_hat = theta_hat[i];
    f.v_hat = v_hat[i];
    f.u = u_from_theta(theta_hat[i], v_hat[i], config.vehicle);
    f.index = i;
    processed.push_back(std::move(f));
  }
  ds.frames = filter_stopped(std::move(processed), config.min_speed);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& dir, const PreprocessConfig& config) {
  const auto entries = read_frames_csv(dir / "frames.csv");
  const auto telemetry = read_telemetry_csv(dir / "telemetry.csv");
  std::vector<Image> images;
  images.reserve(entries.size());
  for (const auto& e : entries) {
    auto img = read_image(find_frame_file(dir, e.index));
    if (img.channels != 3) throw DatasetError("frame " + std::to_string(e.index) + " is not RGB");
    images.push_back(std::move(img));
  }
  return preprocess_sequence(images, entries, telemetry, config);
}

}  // namespace attsteer
