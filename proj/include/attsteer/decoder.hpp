#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "attsteer/autodiff.hpp"
#include "attsteer/params.hpp"
#include "attsteer/rng.hpp"

namespace attsteer {

struct DecoderConfig {
  std::size_t locations = 50;   // L
  std::size_t depth = 16;       // D
  std::size_t hidden = 64;      // LSTM width
  std::size_t attn_hidden = 64; // f_attn hidden layer
  std::size_t out_hidden = 64;  // f_out hidden layer
  double keep_prob = 0.5;       // dropout on h feeding f_attn and f_out
  bool use_beta = true;         // beta gate; when off the context is ungated
  double output_scale = 0.01;   // f_out's scalar is multiplied by this (1/m)

  std::size_t context_size() const { return locations * depth; }
  void validate() const;
};

Params init_decoder_params(const DecoderConfig& config, std::uint64_t seed);

/// Recurrent state for a batch of B independent sequences.
template <typename T>
struct LstmState {
  Var<T> h;  // [B, H]
  Var<T> c;  // [B, H]
};

template <typename T>
struct StepOutput {
  Var<T> u_hat;   // [B, 1]
  Var<T> alpha;   // [B, L]
  Var<T> beta;    // [B, 1]
  Var<T> context; // [B, L*D]
  LstmState<T> state;
};

/// Bundles what every decoder function needs. `dropout_rng` set means
/// train mode.
template <typename T>
struct DecoderContext {
  const ParamVars<T>& params;
  const DecoderConfig& config;
  Rng* dropout_rng = nullptr;
};

/// c0, h0 from the location-mean of the first cube; cube is [B, L, D].
template <typename T>
LstmState<T> init_state(Var<T> cube, const DecoderContext<T>& ctx);

/// f_attn logits per location, [B, L].
template <typename T>
Var<T> attention_logits(Var<T> cube, Var<T> h_prev, const DecoderContext<T>& ctx);

/// softmax over locations of attention_logits, [B, L].
template <typename T>
Var<T> attend(Var<T> cube, Var<T> h_prev, const DecoderContext<T>& ctx);

/// y = beta * flatten(alpha_i x_i); returns {y [B, L*D], beta [B, 1]}.
template <typename T>
std::pair<Var<T>, Var<T>> make_context(Var<T> cube, Var<T> alpha, Var<T> h_prev,
                                       const DecoderContext<T>& ctx);

/// One LSTM cell update; gates are laid out i, f, g, o in the 4H axis.
template <typename T>
LstmState<T> lstm_cell(Var<T> input, const LstmState<T>& prev, const DecoderContext<T>& ctx);

template <typename T>
StepOutput<T> step(Var<T> cube, const LstmState<T>& state, const DecoderContext<T>& ctx);

template <typename T>
struct Rollout {
  std::vector<Var<T>> u_hat;  // T entries of [B, 1]
  std::vector<Var<T>> alpha;  // T entries of [B, L]
};

/// init_state from cubes[0], then one step per cube.
template <typename T>
Rollout<T> rollout(const std::vector<Var<T>>& cubes, const DecoderContext<T>& ctx);

/// Inference on flattened cubes ([L, D] each) for a single sequence.
struct RolloutResult {
  std::vector<double> u_hat;
  std::vector<std::vector<double>> alpha;
};
RolloutResult run_rollout(const std::vector<Tensor>& flat_cubes, const Params& params,
                          const DecoderConfig& config);

}  // namespace attsteer
