#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attsteer/image.hpp"
#include "attsteer/saliency.hpp"
#include "attsteer/synth.hpp"
#include "attsteer/training.hpp"

namespace attsteer {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a subcommand needs. Defaults, then the JSON config, then
/// command-line flags, in increasing precedence.
struct RunConfig {
  std::string subcommand;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  std::uint64_t seed = 0;

  SmoothingConfig smoothing;
  VehicleParams vehicle;
  double min_speed = 1.0;
  ModelConfig model = ModelConfig::full_scale();
  TrainConfig train;  // train.loss is the LossConfig
  SaliencyConfig saliency;
  SceneParams scene;
  std::vector<double> sweep_alphas = {0.01, 0.05, 0.1, 0.3, 0.5, 1.0};

  PreprocessConfig preprocess() const;
  void validate() const;
};

/// Applies a JSON config on top of `config`; unknown keys are rejected.
void apply_config(RunConfig& config, const nlohmann::ordered_json& j);
/// Complete config, readable by apply_config.
nlohmann::ordered_json config_to_json(const RunConfig& config);

/// Version string recorded in run.json.
std::string version_string();

/// Normalises the map to [0, 1] and blends red over the frame in proportion
/// to it. With hulls, only their interiors are tinted and their outlines are
/// drawn where the map is non-zero.
Image render_overlay(const Image& frame, const AttentionMap& map,
                     const std::vector<Polygon>* causal_hulls = nullptr);

/// Subcommands: synth, train, evaluate, attend, causal, sweep. Returns the
/// process exit status; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attsteer
