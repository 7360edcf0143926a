#include "attsteer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

namespace attsteer {

std::string_view primitive_name(Primitive op) noexcept {
  switch (op) {
    case Primitive::leaf: return "leaf";
    case Primitive::conv2d: return "conv2d";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::multiply: return "multiply";
    case Primitive::scale: return "scale";
    case Primitive::tanh: return "tanh";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::relu: return "relu";
    case Primitive::softmax: return "softmax";
    case Primitive::reduce_sum: return "reduce_sum";
    case Primitive::abs: return "abs";
    case Primitive::reshape: return "reshape";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::dropout: return "dropout";
    case Primitive::custom: return "custom";
  }
  return "unknown";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// C[m,n] (+)= op(A) * op(B); A is stored k x m when transposed, B n x k.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap<T> cm(c, M, N);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, K, N);
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, K, N);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, N, K).transpose();
  } else {
    cm.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, N, K).transpose();
  }
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

// ---- broadcasting ----

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

BroadcastPlan plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  p.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) shape_mismatch(op, a, b);
    p.out[d] = std::max(pa[d], pb[d]);
  }
  auto sa = row_major_strides(pa);
  auto sb = row_major_strides(pb);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] == 1) sa[d] = 0;
    if (pb[d] == 1) sb[d] = 0;
  }
  p.stride_a = std::move(sa);
  p.stride_b = std::move(sb);
  return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = element_count(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  const std::size_t inner = p.out[rank - 1];
  const std::size_t sa = p.stride_a[rank - 1];
  const std::size_t sb = p.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * sa, ob + j * sb);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// ---- convolution geometry ----

struct ConvGeometry {
  std::size_t n, h, w, c, kh, kw, f, stride, ho, wo, pad_top, pad_left;
  std::size_t rows() const { return n * ho * wo; }
  std::size_t cols() const { return kh * kw * c; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& k, std::size_t stride) {
  if (x.size() != 4 || k.size() != 4 || x[3] != k[2]) shape_mismatch("conv2d", x, k);
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x[0];
  g.h = x[1];
  g.w = x[2];
  g.c = x[3];
  g.kh = k[0];
  g.kw = k[1];
  g.f = k[3];
  g.stride = stride;
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  const std::size_t need_h = (g.ho - 1) * stride + g.kh;
  const std::size_t need_w = (g.wo - 1) * stride + g.kw;
  g.pad_top = need_h > g.h ? (need_h - g.h) / 2 : 0;
  g.pad_left = need_w > g.w ? (need_w - g.w) / 2 : 0;
  return g;
}

template <typename T>
std::vector<T> im2col(const ConvGeometry& g, const T* x) {
  std::vector<T> cols(g.rows() * g.cols(), T(0));
  T* dst = cols.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                ix < static_cast<std::ptrdiff_t>(g.w)) {
              const T* src = x + ((n * g.h + static_cast<std::size_t>(iy)) * g.w +
                                  static_cast<std::size_t>(ix)) *
                                     g.c;
              std::copy(src, src + g.c, dst);
            }
            dst += g.c;
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* dx) {
  const T* src = cols;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                ix < static_cast<std::ptrdiff_t>(g.w)) {
              T* d = dx + ((n * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)) *
                              g.c;
              for (std::size_t c = 0; c < g.c; ++c) d[c] += src[c];
            }
            src += g.c;
          }
        }
      }
    }
  }
}

// outer x axis x inner decomposition
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  AxisSplit a;
  for (std::size_t d = 0; d < axis; ++d) a.outer *= s[d];
  a.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) a.inner *= s[d];
  return a;
}

Shape reduced_shape(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != axis) out.push_back(s[d]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
std::string record_label(const Record<T>& r) {
  if (r.op == Primitive::custom && r.rule) return r.rule->name;
  return std::string(primitive_name(r.op));
}

}  // namespace

// ---------------------------------------------------------------------------
// forward kernels

template <typename T>
BasicTensor<T> evaluate_record(const Record<T>& r, std::span<const BasicTensor<T>* const> in) {
  auto need = [&](std::size_t k) {
    if (in.size() != k) {
      throw ShapeError(std::string(primitive_name(r.op)) + ": expected " + std::to_string(k) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (r.op) {
    case Primitive::leaf:
      return r.value;
    case Primitive::conv2d: {
      need(2);
      const auto g = conv_geometry(in[0]->shape(), in[1]->shape(), r.stride);
      const auto cols = im2col(g, in[0]->data());
      BasicTensor<T> out(Shape{g.n, g.ho, g.wo, g.f});
      gemm<T>(false, false, g.rows(), g.f, g.cols(), cols.data(), in[1]->data(), out.data(),
              false);
      return out;
    }
    case Primitive::matmul: {
      need(2);
      const auto& a = in[0]->shape();
      const auto& b = in[1]->shape();
      if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) shape_mismatch("matmul", a, b);
      BasicTensor<T> out(Shape{a[0], b[1]});
      gemm<T>(false, false, a[0], b[1], a[1], in[0]->data(), in[1]->data(), out.data(), false);
      return out;
    }
    case Primitive::add:
    case Primitive::sub:
    case Primitive::multiply: {
      need(2);
      const auto plan = plan_broadcast(primitive_name(r.op), in[0]->shape(), in[1]->shape());
      BasicTensor<T> out(plan.out);
      const T* a = in[0]->data();
      const T* b = in[1]->data();
      T* o = out.data();
      if (r.op == Primitive::add) {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = a[ia] + b[ib];
        });
      } else if (r.op == Primitive::sub) {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = a[ia] - b[ib];
        });
      } else {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = a[ia] * b[ib];
        });
      }
      return out;
    }
    case Primitive::scale: {
      need(1);
      BasicTensor<T> out = *in[0];
      for (auto& v : out.values()) v *= r.factor;
      return out;
    }
    case Primitive::tanh: {
      need(1);
      BasicTensor<T> out = *in[0];
      for (auto& v : out.values()) v = std::tanh(v);
      return out;
    }
    case Primitive::sigmoid: {
      need(1);
      BasicTensor<T> out = *in[0];
      for (auto& v : out.values()) v = sigmoid_scalar(v);
      return out;
    }
    case Primitive::relu: {
      need(1);
      BasicTensor<T> out = *in[0];
      for (auto& v : out.values()) v = v > T(0) ? v : T(0);
      return out;
    }
    case Primitive::abs: {
      need(1);
      BasicTensor<T> out = *in[0];
      for (auto& v : out.values()) v = std::abs(v);
      return out;
    }
    case Primitive::softmax: {
      need(1);
      const auto s = split_axis("softmax", in[0]->shape(), r.axis);
      BasicTensor<T> out = *in[0];
      T* o = out.data();
      for (std::size_t a = 0; a < s.outer; ++a) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          T* base = o + a * s.extent * s.inner + c;
          T mx = base[0];
          for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, base[k * s.inner]);
          T total = 0;
          for (std::size_t k = 0; k < s.extent; ++k) {
            base[k * s.inner] = std::exp(base[k * s.inner] - mx);
            total += base[k * s.inner];
          }
          for (std::size_t k = 0; k < s.extent; ++k) base[k * s.inner] /= total;
        }
      }
      return out;
    }
    case Primitive::reduce_sum: {
      need(1);
      const auto s = split_axis("reduce_sum", in[0]->shape(), r.axis);
      BasicTensor<T> out(reduced_shape(in[0]->shape(), r.axis));
      const T* x = in[0]->data();
      T* o = out.data();
      for (std::size_t a = 0; a < s.outer; ++a) {
        for (std::size_t k = 0; k < s.extent; ++k) {
          const T* row = x + (a * s.extent + k) * s.inner;
          T* dst = o + a * s.inner;
          for (std::size_t c = 0; c < s.inner; ++c) dst[c] += row[c];
        }
      }
      return out;
    }
    case Primitive::reshape: {
      need(1);
      return in[0]->reshaped(r.target);
    }
    case Primitive::concat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const Shape& first = in[0]->shape();
      if (r.axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
      Shape out_shape = first;
      out_shape[r.axis] = 0;
      for (const auto* t : in) {
        const Shape& s = t->shape();
        if (s.size() != first.size()) shape_mismatch("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
          if (d != r.axis && s[d] != first[d]) shape_mismatch("concat", first, s);
        }
        out_shape[r.axis] += s[r.axis];
      }
      BasicTensor<T> out(out_shape);
      const auto so = split_axis("concat", out_shape, r.axis);
      std::size_t offset = 0;
      for (const auto* t : in) {
        const std::size_t e = t->shape()[r.axis];
        const std::size_t chunk = e * so.inner;
        for (std::size_t a = 0; a < so.outer; ++a) {
          std::copy(t->data() + a * chunk, t->data() + (a + 1) * chunk,
                    out.data() + (a * so.extent + offset) * so.inner);
        }
        offset += e;
      }
      return out;
    }
    case Primitive::slice: {
      need(1);
      const auto s = split_axis("slice", in[0]->shape(), r.axis);
      if (r.begin >= r.end || r.end > s.extent) {
        throw ShapeError("slice: range [" + std::to_string(r.begin) + ", " +
                         std::to_string(r.end) + ") invalid for " + to_string(in[0]->shape()));
      }
      Shape out_shape = in[0]->shape();
      out_shape[r.axis] = r.end - r.begin;
      BasicTensor<T> out(out_shape);
      const std::size_t chunk = (r.end - r.begin) * s.inner;
      for (std::size_t a = 0; a < s.outer; ++a) {
        const T* src = in[0]->data() + (a * s.extent + r.begin) * s.inner;
        std::copy(src, src + chunk, out.data() + a * chunk);
      }
      return out;
    }
    case Primitive::dropout: {
      need(1);
      if (r.mask.shape() != in[0]->shape()) shape_mismatch("dropout", in[0]->shape(), r.mask.shape());
      BasicTensor<T> out = *in[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= r.mask[i];
      return out;
    }
    case Primitive::custom:
      return r.rule->forward(in);
  }
  throw std::logic_error("unknown primitive");
}

// ---------------------------------------------------------------------------
// vector-Jacobian products

template <typename T>
std::vector<BasicTensor<T>> record_vjp(const Record<T>& r,
                                       std::span<const BasicTensor<T>* const> in,
                                       const std::vector<bool>& wanted, const BasicTensor<T>& g) {
  std::vector<BasicTensor<T>> out(in.size());
  auto want = [&](std::size_t k) { return k < wanted.size() && wanted[k]; };
  const BasicTensor<T>& y = r.value;
  switch (r.op) {
    case Primitive::leaf:
      break;
    case Primitive::conv2d: {
      const auto g2 = conv_geometry(in[0]->shape(), in[1]->shape(), r.stride);
      if (want(1)) {
        const auto cols = im2col(g2, in[0]->data());
        BasicTensor<T> dk(in[1]->shape());
        gemm<T>(true, false, g2.cols(), g2.f, g2.rows(), cols.data(), g.data(), dk.data(), false);
        out[1] = std::move(dk);
      }
      if (want(0)) {
        std::vector<T> dcols(g2.rows() * g2.cols());
        gemm<T>(false, true, g2.rows(), g2.cols(), g2.f, g.data(), in[1]->data(), dcols.data(),
                false);
        BasicTensor<T> dx(in[0]->shape());
        col2im_add(g2, dcols.data(), dx.data());
        out[0] = std::move(dx);
      }
      break;
    }
    case Primitive::matmul: {
      const auto& a = in[0]->shape();
      const auto& b = in[1]->shape();
      if (want(0)) {
        BasicTensor<T> da(a);
        gemm<T>(false, true, a[0], a[1], b[1], g.data(), in[1]->data(), da.data(), false);
        out[0] = std::move(da);
      }
      if (want(1)) {
        BasicTensor<T> db(b);
        gemm<T>(true, false, b[0], b[1], a[0], in[0]->data(), g.data(), db.data(), false);
        out[1] = std::move(db);
      }
      break;
    }
    case Primitive::add:
    case Primitive::sub:
    case Primitive::multiply: {
      const auto plan = plan_broadcast(primitive_name(r.op), in[0]->shape(), in[1]->shape());
      const T* gv = g.data();
      const T* av = in[0]->data();
      const T* bv = in[1]->data();
      if (want(0)) {
        BasicTensor<T> da(in[0]->shape());
        T* d = da.data();
        if (r.op == Primitive::multiply) {
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            d[ia] += gv[i] * bv[ib];
          });
        } else {
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) {
            d[ia] += gv[i];
          });
        }
        out[0] = std::move(da);
      }
      if (want(1)) {
        BasicTensor<T> db(in[1]->shape());
        T* d = db.data();
        if (r.op == Primitive::multiply) {
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            d[ib] += gv[i] * av[ia];
          });
        } else if (r.op == Primitive::sub) {
          for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t ib) {
            d[ib] -= gv[i];
          });
        } else {
          for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t ib) {
            d[ib] += gv[i];
          });
        }
        out[1] = std::move(db);
      }
      break;
    }
    case Primitive::scale: {
      if (want(0)) {
        BasicTensor<T> d = g;
        for (auto& v : d.values()) v *= r.factor;
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::tanh: {
      if (want(0)) {
        BasicTensor<T> d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= T(1) - y[i] * y[i];
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::sigmoid: {
      if (want(0)) {
        BasicTensor<T> d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (T(1) - y[i]);
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::relu: {
      if (want(0)) {
        BasicTensor<T> d = g;
        const auto& x = *in[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (!(x[i] > T(0))) d[i] = T(0);
        }
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::abs: {
      if (want(0)) {
        BasicTensor<T> d = g;
        const auto& x = *in[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
          const T s = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
          d[i] *= s;
        }
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::softmax: {
      if (want(0)) {
        const auto s = split_axis("softmax", y.shape(), r.axis);
        BasicTensor<T> d(y.shape());
        for (std::size_t a = 0; a < s.outer; ++a) {
          for (std::size_t c = 0; c < s.inner; ++c) {
            const std::size_t base = a * s.extent * s.inner + c;
            T dot = 0;
            for (std::size_t k = 0; k < s.extent; ++k) {
              dot += g[base + k * s.inner] * y[base + k * s.inner];
            }
            for (std::size_t k = 0; k < s.extent; ++k) {
              const std::size_t i = base + k * s.inner;
              d[i] = y[i] * (g[i] - dot);
            }
          }
        }
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::reduce_sum: {
      if (want(0)) {
        const auto s = split_axis("reduce_sum", in[0]->shape(), r.axis);
        BasicTensor<T> d(in[0]->shape());
        for (std::size_t a = 0; a < s.outer; ++a) {
          for (std::size_t k = 0; k < s.extent; ++k) {
            std::copy(g.data() + a * s.inner, g.data() + (a + 1) * s.inner,
                      d.data() + (a * s.extent + k) * s.inner);
          }
        }
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::reshape: {
      if (want(0)) out[0] = g.reshaped(in[0]->shape());
      break;
    }
    case Primitive::concat: {
      const auto so = split_axis("concat", y.shape(), r.axis);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < in.size(); ++p) {
        const std::size_t e = in[p]->shape()[r.axis];
        if (want(p)) {
          BasicTensor<T> d(in[p]->shape());
          const std::size_t chunk = e * so.inner;
          for (std::size_t a = 0; a < so.outer; ++a) {
            const T* src = g.data() + (a * so.extent + offset) * so.inner;
            std::copy(src, src + chunk, d.data() + a * chunk);
          }
          out[p] = std::move(d);
        }
        offset += e;
      }
      break;
    }
    case Primitive::slice: {
      if (want(0)) {
        const auto s = split_axis("slice", in[0]->shape(), r.axis);
        BasicTensor<T> d(in[0]->shape());
        const std::size_t chunk = (r.end - r.begin) * s.inner;
        for (std::size_t a = 0; a < s.outer; ++a) {
          std::copy(g.data() + a * chunk, g.data() + (a + 1) * chunk,
                    d.data() + (a * s.extent + r.begin) * s.inner);
        }
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::dropout: {
      if (want(0)) {
        BasicTensor<T> d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= r.mask[i];
        out[0] = std::move(d);
      }
      break;
    }
    case Primitive::custom: {
      auto grads = r.rule->backward(in, y, g);
      if (grads.size() != in.size()) {
        throw ShapeError("custom primitive '" + r.rule->name + "' returned " +
                         std::to_string(grads.size()) + " gradients for " +
                         std::to_string(in.size()) + " inputs");
      }
      for (std::size_t k = 0; k < in.size(); ++k) {
        if (want(k)) out[k] = std::move(grads[k]);
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, std::string name) {
  if (value.empty()) throw ShapeError("leaf value must be non-empty");
  if (!value.all_finite()) throw NumericError("leaf '" + name + "' contains non-finite values");
  Record<T> r;
  r.op = Primitive::leaf;
  r.value = std::move(value);
  r.needs_grad = true;
  r.name = std::move(name);
  records_.push_back(std::move(r));
  return Var<T>{this, records_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  if (value.empty()) throw ShapeError("constant value must be non-empty");
  if (!value.all_finite()) throw NumericError("constant contains non-finite values");
  Record<T> r;
  r.op = Primitive::leaf;
  r.value = std::move(value);
  r.needs_grad = false;
  records_.push_back(std::move(r));
  return Var<T>{this, records_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Record<T> r) {
  std::vector<const BasicTensor<T>*> in;
  in.reserve(r.inputs.size());
  r.needs_grad = false;
  for (auto id : r.inputs) {
    if (id >= records_.size()) throw std::out_of_range("record input refers to a later value");
    in.push_back(&records_[id].value);
    r.needs_grad = r.needs_grad || records_[id].needs_grad;
  }
  r.value = evaluate_record<T>(r, in);
  if (!r.value.all_finite()) {
    throw NumericError("non-finite result from " + record_label(r));
  }
  records_.push_back(std::move(r));
  return Var<T>{this, records_.size() - 1};
}

template <typename T>
std::vector<std::size_t> Tape<T>::leaf_ids() const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].op == Primitive::leaf && records_[i].needs_grad) ids.push_back(i);
  }
  return ids;
}

template <typename T>
void Tape<T>::set_leaf_value(std::size_t id, BasicTensor<T> value) {
  auto& r = records_.at(id);
  if (r.op != Primitive::leaf) throw std::invalid_argument("record is not a leaf");
  if (value.shape() != r.value.shape()) shape_mismatch("set_leaf_value", r.value.shape(), value.shape());
  r.value = std::move(value);
}

template <typename T>
void Tape<T>::replay() {
  std::vector<const BasicTensor<T>*> in;
  for (auto& r : records_) {
    if (r.op == Primitive::leaf) continue;
    in.clear();
    for (auto id : r.inputs) in.push_back(&records_[id].value);
    r.value = evaluate_record<T>(r, in);
    if (!r.value.all_finite()) throw NumericError("non-finite result from " + record_label(r));
  }
}

template <typename T>
Gradients<T> backward(const Tape<T>& tape, const BasicTensor<T>& seed) {
  if (tape.empty()) throw std::invalid_argument("backward on an empty tape");
  return backward(tape, tape.size() - 1, seed);
}

template <typename T>
Gradients<T> backward(const Tape<T>& tape, std::size_t output_id, const BasicTensor<T>& seed) {
  if (tape.empty()) throw std::invalid_argument("backward on an empty tape");
  const auto& out_rec = tape.record(output_id);
  if (seed.shape() != out_rec.value.shape()) {
    shape_mismatch("backward seed", out_rec.value.shape(), seed.shape());
  }
  std::vector<BasicTensor<T>> grads(output_id + 1);
  grads[output_id] = seed;
  std::vector<const BasicTensor<T>*> in;
  std::vector<bool> wanted;
  for (std::size_t id = output_id + 1; id-- > 0;) {
    const auto& r = tape.record(id);
    if (r.op == Primitive::leaf || !r.needs_grad || grads[id].empty()) continue;
    in.clear();
    wanted.clear();
    for (auto k : r.inputs) {
      in.push_back(&tape.record(k).value);
      wanted.push_back(tape.record(k).needs_grad);
    }
    auto local = record_vjp<T>(r, in, wanted, grads[id]);
    for (std::size_t k = 0; k < r.inputs.size(); ++k) {
      if (local[k].empty()) continue;
      auto& dst = grads[r.inputs[k]];
      if (dst.empty()) {
        dst = std::move(local[k]);
      } else {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += local[k][i];
      }
    }
    grads[id] = BasicTensor<T>();
  }
  Gradients<T> result;
  for (auto id : tape.leaf_ids()) {
    if (id < grads.size() && !grads[id].empty()) {
      result.emplace(id, std::move(grads[id]));
    } else {
      result.emplace(id, BasicTensor<T>(tape.record(id).value.shape()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// constructors

namespace {

template <typename T>
Tape<T>& tape_of(std::initializer_list<Var<T>> vars) {
  Tape<T>* t = nullptr;
  for (const auto& v : vars) {
    if (v.tape == nullptr) throw std::invalid_argument("variable is not bound to a tape");
    if (t != nullptr && t != v.tape) throw std::invalid_argument("variables from different tapes");
    t = v.tape;
  }
  return *t;
}

template <typename T>
Var<T> push_op(Primitive op, std::initializer_list<Var<T>> in, Record<T> r = {}) {
  auto& tape = tape_of(in);
  r.op = op;
  for (const auto& v : in) r.inputs.push_back(v.id);
  return tape.push(std::move(r));
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride) {
  Record<T> r;
  r.stride = stride;
  return push_op<T>(Primitive::conv2d, {input, kernel}, std::move(r));
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return push_op<T>(Primitive::matmul, {a, b});
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return push_op<T>(Primitive::add, {a, b});
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return push_op<T>(Primitive::sub, {a, b});
}

template <typename T>
Var<T> multiply(Var<T> a, Var<T> b) {
  return push_op<T>(Primitive::multiply, {a, b});
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Record<T> r;
  r.factor = factor;
  return push_op<T>(Primitive::scale, {a}, std::move(r));
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return push_op<T>(Primitive::tanh, {a});
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return push_op<T>(Primitive::sigmoid, {a});
}

template <typename T>
Var<T> relu(Var<T> a) {
  return push_op<T>(Primitive::relu, {a});
}

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  Record<T> r;
  r.axis = axis;
  return push_op<T>(Primitive::softmax, {a}, std::move(r));
}

template <typename T>
Var<T> reduce_sum(Var<T> a, std::size_t axis) {
  Record<T> r;
  r.axis = axis;
  return push_op<T>(Primitive::reduce_sum, {a}, std::move(r));
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  const std::size_t n = a.value().size();
  return reduce_sum(reshape(a, Shape{n}), std::size_t{0});
}

template <typename T>
Var<T> abs(Var<T> a) {
  return push_op<T>(Primitive::abs, {a});
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (element_count(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Record<T> r;
  r.target = std::move(shape);
  return push_op<T>(Primitive::reshape, {a}, std::move(r));
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape<T>* tape = parts.front().tape;
  Record<T> r;
  r.op = Primitive::concat;
  r.axis = axis;
  for (const auto& p : parts) {
    if (p.tape != tape) throw std::invalid_argument("concat: variables from different tapes");
    r.inputs.push_back(p.id);
  }
  return tape->push(std::move(r));
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  Record<T> r;
  r.axis = axis;
  r.begin = begin;
  r.end = end;
  return push_op<T>(Primitive::slice, {a}, std::move(r));
}

template <typename T>
Var<T> dropout(Var<T> a, BasicTensor<T> mask) {
  Record<T> r;
  r.mask = std::move(mask);
  return push_op<T>(Primitive::dropout, {a}, std::move(r));
}

template <typename T>
Var<T> custom(std::shared_ptr<const CustomRule<T>> rule, std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw std::invalid_argument("custom primitive needs inputs");
  Tape<T>* tape = inputs.front().tape;
  Record<T> r;
  r.op = Primitive::custom;
  r.rule = std::move(rule);
  for (const auto& v : inputs) r.inputs.push_back(v.id);
  return tape->push(std::move(r));
}

// ---------------------------------------------------------------------------
// gradient checking

namespace {

template <typename T>
BasicTensor<T> check_weights(const Shape& shape, std::uint64_t salt) {
  std::mt19937_64 rng(0x5eedULL ^ salt);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  BasicTensor<T> w(shape);
  for (auto& v : w.values()) v = static_cast<T>(u(rng));
  return w;
}

// Five-point central stencil; f(offset) evaluates the objective at x + offset.
template <typename F>
double central_difference(F&& f, double step) {
  const double d1 = f(step) - f(-step);
  const double d2 = f(2.0 * step) - f(-2.0 * step);
  return (8.0 * d1 - d2) / (12.0 * step);
}

template <typename T>
double weighted_sum(const BasicTensor<T>& out, const BasicTensor<T>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    s += static_cast<double>(out[i]) * static_cast<double>(w[i]);
  }
  return s;
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / std::max(scale, 1e-8);
}

// Checks a single record's adjoint against finite differences of its own
// forward rule.
template <typename T>
double local_record_error(const Record<T>& r, std::span<const BasicTensor<T>* const> in,
                          double step, std::uint64_t salt) {
  const auto w = check_weights<T>(r.value.shape(), salt);
  std::vector<bool> wanted(in.size(), true);
  const auto analytic = record_vjp<T>(r, in, wanted, w);
  double worst = 0.0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    if (analytic[k].empty()) continue;
    std::vector<const BasicTensor<T>*> probe(in.begin(), in.end());
    BasicTensor<T> x = *in[k];
    probe[k] = &x;
    std::vector<double> a(x.size()), n(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T orig = x[i];
      n[i] = central_difference(
          [&](double offset) {
            x[i] = static_cast<T>(orig + offset);
            return weighted_sum(evaluate_record<T>(r, probe), w);
          },
          step);
      x[i] = orig;
      a[i] = static_cast<double>(analytic[k][i]);
    }
    worst = std::max(worst, relative_error(a, n));
  }
  return worst;
}

}  // namespace

template <typename T>
GradientCheckReport gradient_check(Tape<T>& tape, double tolerance, double step) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("gradient_check: tolerance must be positive");
  if (tape.empty()) throw std::invalid_argument("gradient_check: empty tape");
  GradientCheckReport report;
  const std::size_t out_id = tape.size() - 1;
  const auto w = check_weights<T>(tape.record(out_id).value.shape(), out_id);
  const auto analytic = backward(tape, w);

  report.pass = true;
  for (auto leaf : tape.leaf_ids()) {
    BasicTensor<T> value = tape.record(leaf).value;
    const BasicTensor<T> original = value;
    std::vector<double> a(value.size()), n(value.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      n[i] = central_difference(
          [&](double offset) {
            value[i] = static_cast<T>(original[i] + offset);
            tape.set_leaf_value(leaf, value);
            tape.replay();
            return weighted_sum(tape.record(out_id).value, w);
          },
          step);
      value[i] = original[i];
      a[i] = static_cast<double>(analytic.at(leaf)[i]);
    }
    tape.set_leaf_value(leaf, original);
    LeafCheck lc;
    lc.leaf_id = leaf;
    lc.name = tape.record(leaf).name;
    lc.max_rel_error = relative_error(a, n);
    lc.pass = lc.max_rel_error <= tolerance;
    report.pass = report.pass && lc.pass;
    report.max_rel_error = std::max(report.max_rel_error, lc.max_rel_error);
    report.leaves.push_back(std::move(lc));
  }
  tape.replay();

  if (!report.pass) {
    std::vector<const BasicTensor<T>*> in;
    for (std::size_t id = 0; id < tape.size(); ++id) {
      const auto& r = tape.record(id);
      if (r.op == Primitive::leaf || !r.needs_grad) continue;
      in.clear();
      for (auto k : r.inputs) in.push_back(&tape.record(k).value);
      if (local_record_error<T>(r, in, step, id) > tolerance) {
        report.offending_primitive = record_label(r);
        break;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define ATTSTEER_INSTANTIATE(T)                                                                 \
  template class Tape<T>;                                                                       \
  template BasicTensor<T> evaluate_record<T>(const Record<T>&,                                  \
                                             std::span<const BasicTensor<T>* const>);           \
  template std::vector<BasicTensor<T>> record_vjp<T>(                                           \
      const Record<T>&, std::span<const BasicTensor<T>* const>, const std::vector<bool>&,       \
      const BasicTensor<T>&);                                                                   \
  template Gradients<T> backward<T>(const Tape<T>&, const BasicTensor<T>&);                     \
  template Gradients<T> backward<T>(const Tape<T>&, std::size_t, const BasicTensor<T>&);        \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::size_t);                                       \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                    \
  template Var<T> add<T>(Var<T>, Var<T>);                                                       \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                       \
  template Var<T> multiply<T>(Var<T>, Var<T>);                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                          \
  template Var<T> tanh<T>(Var<T>);                                                              \
  template Var<T> sigmoid<T>(Var<T>);                                                           \
  template Var<T> relu<T>(Var<T>);                                                              \
  template Var<T> softmax<T>(Var<T>, std::size_t);                                              \
  template Var<T> reduce_sum<T>(Var<T>, std::size_t);                                           \
  template Var<T> sum_all<T>(Var<T>);                                                           \
  template Var<T> abs<T>(Var<T>);                                                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                                    \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                              \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);                      \
  template Var<T> dropout<T>(Var<T>, BasicTensor<T>);                                           \
  template Var<T> custom<T>(std::shared_ptr<const CustomRule<T>>, std::span<const Var<T>>);     \
  template GradientCheckReport gradient_check<T>(Tape<T>&, double, double);

ATTSTEER_INSTANTIATE(float)
ATTSTEER_INSTANTIATE(double)

#undef ATTSTEER_INSTANTIATE

}  // namespace attsteer
