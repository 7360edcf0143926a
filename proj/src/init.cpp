#include "attsteer/init.hpp"

#include <cmath>
#include <random>

namespace attsteer {

Fans fans_of(const Shape& shape) {
  if (shape.empty()) throw ShapeError("xavier_init needs rank >= 1");
  if (shape.size() == 1) return {static_cast<double>(shape[0]), static_cast<double>(shape[0])};
  double receptive = 1.0;
  for (std::size_t d = 0; d + 2 < shape.size(); ++d) receptive *= static_cast<double>(shape[d]);
  return {receptive * static_cast<double>(shape[shape.size() - 2]),
          receptive * static_cast<double>(shape.back())};
}

Tensor xavier_init(const Shape& shape, std::uint64_t seed) {
  const auto fans = fans_of(shape);
  const double bound = std::sqrt(6.0 / (fans.fan_in + fans.fan_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(u(rng));
  return t;
}

}  // namespace attsteer
