#pragma once

#include <cstdint>

#include "attsteer/tensor.hpp"

namespace attsteer {

/// fan_in/fan_out of a weight tensor: the last two axes are (in, out) and any
/// leading axes form the receptive field; rank-1 tensors use their length.
struct Fans {
  double fan_in = 1.0;
  double fan_out = 1.0;
};
Fans fans_of(const Shape& shape);

/// Glorot-uniform samples in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(const Shape& shape, std::uint64_t seed);

}  // namespace attsteer
