#pragma once

// Tape-based reverse-mode differentiation over BasicTensor.
//
// Every primitive application appends a Record holding its operation, the
// ids of its inputs, its attributes and its output value. Records are stored
// in creation order, so the tape is topologically sorted by construction and
// can be replayed forward after leaf values change.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attsteer/tensor.hpp"

namespace attsteer {

enum class Primitive : std::uint8_t {
  leaf,
  conv2d,
  matmul,
  add,
  sub,
  multiply,
  scale,
  tanh,
  sigmoid,
  relu,
  softmax,
  reduce_sum,
  abs,
  reshape,
  concat,
  slice,
  dropout,
  custom,
};

std::string_view primitive_name(Primitive op) noexcept;

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// User-supplied primitive; used for extensions and for negative controls of
/// the gradient checker.
template <typename T>
struct CustomRule {
  using Inputs = std::span<const BasicTensor<T>* const>;
  std::string name;
  std::function<BasicTensor<T>(Inputs)> forward;
  std::function<std::vector<BasicTensor<T>>(Inputs, const BasicTensor<T>& output,
                                            const BasicTensor<T>& grad_output)>
      backward;
};

template <typename T>
struct Record {
  Primitive op = Primitive::leaf;
  std::vector<std::size_t> inputs;
  BasicTensor<T> value;
  bool needs_grad = false;  // leaf: trainable; otherwise: any input needs grad
  std::string name;         // leaves only

  // attributes (meaning depends on op)
  std::size_t stride = 1;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  T factor = T(1);
  Shape target;  // reshape
  BasicTensor<T> mask;
  std::shared_ptr<const CustomRule<T>> rule;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Trainable leaf; backward() reports a gradient for it.
  Var<T> leaf(BasicTensor<T> value, std::string name = {});
  /// Leaf that is held fixed; no gradient is reported or propagated.
  Var<T> constant(BasicTensor<T> value);

  /// Appends a record after evaluating it; validates shapes and finiteness.
  Var<T> push(Record<T> record);

  const Record<T>& record(std::size_t id) const { return records_.at(id); }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  Var<T> output() { return Var<T>{this, records_.size() - 1}; }

  /// Ids of trainable leaves, in creation order.
  std::vector<std::size_t> leaf_ids() const;

  void set_leaf_value(std::size_t id, BasicTensor<T> value);
  /// Recomputes every non-leaf record from the current leaf values.
  void replay();

 private:
  std::vector<Record<T>> records_;
};

template <typename T>
using Gradients = std::map<std::size_t, BasicTensor<T>>;

/// Reverse pass from the tape's final record.
template <typename T>
Gradients<T> backward(const Tape<T>& tape, const BasicTensor<T>& seed);

/// Reverse pass from an arbitrary record.
template <typename T>
Gradients<T> backward(const Tape<T>& tape, std::size_t output_id, const BasicTensor<T>& seed);

// ---- primitive kernels, exposed for replay and local checks ----

template <typename T>
BasicTensor<T> evaluate_record(const Record<T>& record,
                               std::span<const BasicTensor<T>* const> inputs);

/// Vector-Jacobian product of one record; entry k is empty when input k does
/// not need a gradient.
template <typename T>
std::vector<BasicTensor<T>> record_vjp(const Record<T>& record,
                                       std::span<const BasicTensor<T>* const> inputs,
                                       const std::vector<bool>& wanted,
                                       const BasicTensor<T>& grad_output);

// ---- primitive constructors ----

/// NHWC input [N,H,W,C], kernel [KH,KW,C,F]; cross-correlation with zero
/// "same" padding, output [N, ceil(H/s), ceil(W/s), F].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride);
/// [m,k] x [k,n] -> [m,n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// Elementwise with right-aligned broadcasting.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> multiply(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> relu(Var<T> a);
/// Max-subtracted softmax along one axis.
template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis);
/// Sums out one axis; a rank-1 input reduces to shape [1].
template <typename T>
Var<T> reduce_sum(Var<T> a, std::size_t axis);
/// Sum of every element, shape [1].
template <typename T>
Var<T> sum_all(Var<T> a);
/// |x| with subgradient 0 at 0.
template <typename T>
Var<T> abs(Var<T> a);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);
/// x * mask; mask holds 0 or 1/keep (inverted dropout).
template <typename T>
Var<T> dropout(Var<T> a, BasicTensor<T> mask);
template <typename T>
Var<T> custom(std::shared_ptr<const CustomRule<T>> rule, std::span<const Var<T>> inputs);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return multiply(a, b); }

/// Inverted-dropout mask: each entry is 0 with probability 1-keep, else 1/keep.
template <typename T, typename Rng>
BasicTensor<T> make_dropout_mask(const Shape& shape, double keep, Rng& rng);

// ---- gradient checking ----

struct LeafCheck {
  std::size_t leaf_id = 0;
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradientCheckReport {
  std::vector<LeafCheck> leaves;
  bool pass = false;
  /// First record whose local adjoint disagrees with finite differences;
  /// empty when everything passes.
  std::string offending_primitive;
  double max_rel_error = 0.0;
};

/// Compares backward() against five-point central differences of the scalar
/// sum(w * output) for fixed pseudo-random weights w. Errors are measured
/// per leaf as max|analytic - numeric| / max(|analytic|_inf, |numeric|_inf).
/// Leaf values are restored before returning.
template <typename T>
GradientCheckReport gradient_check(Tape<T>& tape, double tolerance, double step = 1e-4);

}  // namespace attsteer

#include "attsteer/autodiff_inl.hpp"
