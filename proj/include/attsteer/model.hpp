#pragma once

#include <span>
#include <vector>

#include "attsteer/decoder.hpp"
#include "attsteer/encoder.hpp"
#include "attsteer/params.hpp"
#include "attsteer/preprocess.hpp"

namespace attsteer {

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::desk_scale();
  DecoderConfig decoder;

  static ModelConfig full_scale();
  static ModelConfig desk_scale();
  /// Copies L and D from the encoder into the decoder.
  void sync();
  void validate() const;
};

/// Encoder weights plus decoder weights for a given config.
Params init_model_params(const ModelConfig& config, std::uint64_t seed);

/// Adds "meta.*" tensors describing the config so a checkpoint can be
/// loaded without side information.
void embed_config(Params& params, const ModelConfig& config);
ModelConfig config_from_params(const Params& params);
/// Params with the meta entries removed.
Params strip_meta(const Params& params);

/// Anything that maps a window of consecutive frames to per-frame u.
class SteeringModel {
 public:
  virtual ~SteeringModel() = default;
  virtual std::vector<double> predict(std::span<const ProcessedFrame> window) const = 0;
};

struct AttentionPrediction {
  std::vector<double> u_hat;
  std::vector<std::vector<double>> alpha;  // per frame, length L
};

class AttentionSteeringModel final : public SteeringModel {
 public:
  AttentionSteeringModel(ModelConfig config, Params params);
  /// Reads a checkpoint written with embedded config.
  static AttentionSteeringModel load(const std::filesystem::path& path);

  std::vector<double> predict(std::span<const ProcessedFrame> window) const override;
  AttentionPrediction attend(std::span<const ProcessedFrame> window) const;

  const ModelConfig& config() const { return config_; }
  const Params& params() const { return params_; }

 private:
  ModelConfig config_;
  Params params_;
};

}  // namespace attsteer
