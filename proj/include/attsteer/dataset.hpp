#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "attsteer/preprocess.hpp"

namespace attsteer {

// On-disk layout:
//   frames/frame_%06d.ppm (or .png)
//   frames.csv      index,timestamp
//   telemetry.csv   timestamp,steering_deg,velocity_mps
//   masks/          optional ground-truth masks

struct FrameEntry {
  std::size_t index = 0;
  double timestamp = 0.0;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<TelemetrySample> read_telemetry_csv(const std::filesystem::path& path);
void write_telemetry_csv(const std::filesystem::path& path,
                         const std::vector<TelemetrySample>& samples);
std::vector<FrameEntry> read_frames_csv(const std::filesystem::path& path);
void write_frames_csv(const std::filesystem::path& path, const std::vector<FrameEntry>& frames);

/// "frame_000042"
std::string frame_stem(std::size_t index);
/// Existing image file for a frame index (.ppm preferred over .png).
std::filesystem::path find_frame_file(const std::filesystem::path& dataset_dir, std::size_t index);

/// Round-trip decimal form used in every CSV the project writes.
std::string format_real(double v);

struct PreprocessConfig {
  SmoothingConfig smoothing;
  VehicleParams vehicle;
  std::size_t height = 80;
  std::size_t width = 160;
  double min_speed = 1.0;
};

struct Dataset {
  std::vector<ProcessedFrame> frames;  // retained frames, source order
  std::size_t source_frames = 0;
};

/// Interpolates telemetry to frame times, smooths steering and velocity over
/// the frame-aligned series, converts to inverse turning radius, loads and
/// normalises frames and drops stopped frames.
Dataset load_dataset(const std::filesystem::path& dir, const PreprocessConfig& config);

/// Same pipeline over in-memory inputs.
Dataset preprocess_sequence(const std::vector<Image>& frames,
                            const std::vector<FrameEntry>& entries,
                            const std::vector<TelemetrySample>& telemetry,
                            const PreprocessConfig& config);

}  // namespace attsteer
