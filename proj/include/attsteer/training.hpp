#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "attsteer/model.hpp"
#include "attsteer/preprocess.hpp"

namespace attsteer {

enum class PenaltyForm { squared, literal };

PenaltyForm parse_penalty_form(const std::string& text);
std::string to_string(PenaltyForm form);

struct LossConfig {
  double lambda = 0.0;
  PenaltyForm penalty = PenaltyForm::squared;
  std::size_t window = 20;  // T

  void validate() const;
};

/// Attention penalty over a T x L row-normalized matrix.
///   squared: sum_i (1 - sum_t a_ti)^2     literal: sum_i (1 - sum_t a_ti)
double attention_penalty(const std::vector<std::vector<double>>& alpha, PenaltyForm form);

/// sum_t |u_t - u_hat_t| + lambda * penalty.
double window_loss(std::span<const double> u, std::span<const double> u_hat,
                   const std::vector<std::vector<double>>& alpha, const LossConfig& config);

/// Batch-mean of window_loss on a tape. u_hat and alpha hold T entries of
/// [B, 1] and [B, L]; targets is [B, T]. Returns shape [1].
template <typename T>
Var<T> window_loss(const std::vector<Var<T>>& u_hat, const std::vector<Var<T>>& alpha,
                   const BasicTensor<T>& targets, const LossConfig& config);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Params m;
  Params v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter that has a gradient.
void adam_step(Params& params, const Params& grads, AdamState& state);

/// Scales grads so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(Params& grads, double max_norm);

/// Gradients of bound parameters keyed by parameter name.
template <typename T>
BasicParams<T> named_gradients(const ParamVars<T>& vars, const Gradients<T>& grads);

/// Start positions of windows of T frames with consecutive source indices.
std::vector<std::size_t> valid_window_starts(std::span<const ProcessedFrame> frames, std::size_t T);
/// `batch` starts drawn uniformly from valid_window_starts.
std::vector<std::size_t> sample_windows(std::span<const ProcessedFrame> frames, std::size_t batch,
                                        std::size_t T, std::uint64_t seed);

struct PretrainConfig {
  bool enabled = true;
  std::size_t steps = 400;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::vector<std::size_t> head = {1164, 100, 50, 10};
};

struct MetricRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double train_mae_deg = 0.0;
};

struct PretrainResult {
  Params encoder;
  Params head;
  std::vector<MetricRow> metrics;
};

/// Trains encoder + fully connected head on per-frame u regression; the
/// head is returned separately and is not part of the steering model.
PretrainResult pretrain_cnn(std::span<const ProcessedFrame> frames, const EncoderConfig& encoder,
                            const PretrainConfig& config, const VehicleParams& vehicle,
                            std::uint64_t seed);

struct TrainConfig {
  LossConfig loss;
  std::size_t batch = 16;
  std::size_t steps = 2000;
  AdamConfig adam;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  bool freeze_encoder = true;  // train the decoder on cached cubes
  PretrainConfig pretrain;
  std::size_t log_every = 10;
};

struct TrainResult {
  Params params;  // encoder + decoder, no meta entries
  std::vector<MetricRow> metrics;
  std::vector<MetricRow> pretrain_metrics;
};

using MetricCallback = std::function<void(const MetricRow&)>;

TrainResult train(std::span<const ProcessedFrame> frames, const ModelConfig& model,
                  const TrainConfig& config, const VehicleParams& vehicle,
                  const MetricCallback& on_metric = {});

struct MaeResult {
  double mae_deg = 0.0;
  double sd_deg = 0.0;
  std::size_t frames = 0;
};

/// Runs the model over consecutive chunks of at most T frames (chunks never
/// cross an index gap), converts u_hat to degrees with each frame's v_hat and
/// compares against theta_hat.
MaeResult evaluate_mae(std::span<const ProcessedFrame> frames, const SteeringModel& model,
                       std::size_t T, const VehicleParams& vehicle);

/// MAE of predicting a constant angle (degrees) on every frame.
MaeResult constant_mae(std::span<const ProcessedFrame> frames, double theta_deg);
double mean_theta(std::span<const ProcessedFrame> frames);

/// Splits into runs of consecutive indices, each cut into chunks of <= T.
std::vector<std::pair<std::size_t, std::size_t>> consecutive_chunks(
    std::span<const ProcessedFrame> frames, std::size_t T);

}  // namespace attsteer
