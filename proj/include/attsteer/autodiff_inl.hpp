#pragma once

#include <random>

namespace attsteer {

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->record(id).value;
}

template <typename T, typename Rng>
BasicTensor<T> make_dropout_mask(const Shape& shape, double keep, Rng& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("dropout keep must be in (0, 1]");
  BasicTensor<T> mask(shape);
  std::bernoulli_distribution draw(keep);
  const T kept = static_cast<T>(1.0 / keep);
  for (auto& m : mask.values()) m = draw(rng) ? kept : T(0);
  return mask;
}

}  // namespace attsteer
