#pragma once

#include <cstdint>
#include <vector>

#include "attsteer/autodiff.hpp"
#include "attsteer/params.hpp"
#include "attsteer/preprocess.hpp"

namespace attsteer {

struct ConvLayerSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t channels = 1;
};

/// Strided, pool-free convolution stack with ReLU after every layer.
struct EncoderConfig {
  std::vector<ConvLayerSpec> layers;
  std::size_t input_height = 80;
  std::size_t input_width = 160;
  std::size_t input_channels = 3;

  /// 80x160 input; 5x5/s2/24, 5x5/s2/36, 5x5/s2/48, 3x3/s1/64, 3x3/s1/64.
  static EncoderConfig full_scale();
  /// 40x80 input, same layout with narrower channels (D = 16).
  static EncoderConfig desk_scale();

  std::size_t cumulative_stride() const;
  std::size_t grid_height() const;
  std::size_t grid_width() const;
  std::size_t depth() const;
  std::size_t locations() const { return grid_height() * grid_width(); }
  void validate() const;
};

/// Final-layer activations viewed as an H' x W' grid of D-dim vectors.
struct FeatureCube {
  Tensor values;  // [H', W', D]

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t depth() const { return values.dim(2); }
  std::size_t locations() const { return height() * width(); }
};

std::string encoder_kernel_name(std::size_t layer);
std::string encoder_bias_name(std::size_t layer);

/// Xavier kernels and zero biases.
Params init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// [N, H, W, C] frames -> [N, H', W', D] features.
template <typename T>
Var<T> encode(Var<T> frames, const ParamVars<T>& params, const EncoderConfig& config);

FeatureCube encode(const ProcessedFrame& frame, const Params& params, const EncoderConfig& config);
/// Batched inference without gradients; returns [N, H', W', D].
Tensor encode_batch(const std::vector<const Tensor*>& frames, const Params& params,
                    const EncoderConfig& config);

/// Row i of the [L, D] result is grid cell (i / W', i % W').
Tensor flatten_cube(const FeatureCube& cube);
FeatureCube unflatten_cube(const Tensor& flat, std::size_t grid_height, std::size_t grid_width);

}  // namespace attsteer
