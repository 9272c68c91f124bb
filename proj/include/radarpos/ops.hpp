// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops. Every op computes its forward value eagerly and records
// a backward closure on the tape of its inputs. Broadcasting is limited to
// adding a rank-1 bias along the trailing axis.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "radarpos/autograd.hpp"

namespace radarpos {

namespace detail {

template <class T>
Tape<T>& common_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

template <class T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, deriv](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::common_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool trailing = av.shape() != bv.shape();
  if (trailing && !(bv.rank() == 1 && bv.size() == av.shape().back())) {
    throw DimensionError("add: shape mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  Tensor<T> out = av;
  const std::size_t width = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += trailing ? bv[i % width] : bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, trailing, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[trailing ? i % width : i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::common_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::common_tape(a, b);
  detail::require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scalar_mul(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  for (T v : a.value().values()) {
    if (!(v > T{0})) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <class T>
Var<T> sin(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <class T>
Var<T> cos(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

namespace detail {
template <class T>
inline constexpr T gelu_c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <class T>
inline constexpr T gelu_k = static_cast<T>(0.044715);
}  // namespace detail

/// GELU, tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& a) {
  using detail::gelu_c;
  using detail::gelu_k;
  return detail::unary(
      a,
      [](T x) { return T{0.5} * x * (T{1} + std::tanh(gelu_c<T> * (x + gelu_k<T> * x * x * x))); },
      [](T x, T) {
        const T th = std::tanh(gelu_c<T> * (x + gelu_k<T> * x * x * x));
        return T{0.5} * (T{1} + th) +
               T{0.5} * x * (T{1} - th * th) * gelu_c<T> * (T{1} + T{3} * gelu_k<T> * x * x);
      });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(total), {ia}, [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scalar_mul(sum(a), T{1} / static_cast<T>(a.value().size()));
}

/// Sum over the trailing axis; a rank-1 input yields shape {1}.
template <class T>
Var<T> sum_last(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t width = av.shape().back();
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) {
    T acc{0};
    for (std::size_t c = 0; c < width; ++c) acc += av[r * width + c];
    out[r] = acc;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / width];
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  auto& tape = parts.front().tape();
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw ContractError("concat operands recorded on different tapes");
    const auto& s = p.shape();
    bool ok = s.size() == shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == shape[i];
    if (!ok) throw DimensionError("concat: incompatible shapes " + to_string(shape) + " and " + to_string(s));
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_axis(shape, axis);
  Tensor<T> out(shape);
  std::vector<std::size_t> ids, offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const std::size_t len = pv.shape()[axis];
    for (std::size_t o = 0; o < split.outer; ++o) {
      const T* src = pv.data() + o * len * split.inner;
      T* dst = out.data() + (o * split.len + offset) * split.inner;
      std::copy(src, src + len * split.inner, dst);
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += len;
  }
  return tape.record(std::move(out), ids, [ids, offsets, split, axis](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.grad(ids[k]);
      const std::size_t len = t.value(ids[k]).shape()[axis];
      for (std::size_t o = 0; o < split.outer; ++o) {
        const T* src = g.data() + (o * split.len + offsets[k]) * split.inner;
        T* dst = gp.data() + o * len * split.inner;
        for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& av = a.value();
  const auto split = detail::split_axis(av.shape(), axis);
  if (length == 0 || start + length > split.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                         to_string(av.shape()));
  }
  Shape shape = av.shape();
  shape[axis] = length;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < split.outer; ++o) {
    const T* src = av.data() + (o * split.len + start) * split.inner;
    std::copy(src, src + length * split.inner, out.data() + o * length * split.inner);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, split, start, length](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t o = 0; o < split.outer; ++o) {
      const T* src = g.data() + o * length * split.inner;
      T* dst = ga.data() + (o * split.len + start) * split.inner;
      for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Rows of a [V×D] table selected by index.
template <class T>
Var<T> embedding_gather(const Var<T>& table, std::vector<std::size_t> indices) {
  const auto& tv = table.value();
  const std::size_t vocab = tv.rows(), width = tv.cols();
  if (indices.empty()) throw DimensionError("embedding_gather with no indices");
  Tensor<T> out(Shape{indices.size(), width});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) {
      throw DimensionError("embedding index " + std::to_string(indices[r]) + " >= table size " + std::to_string(vocab));
    }
    auto src = tv.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {it}, [it, indices = std::move(indices), width](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(it);
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) gt.at(indices[r], c) += g.at(r, c);
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::common_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), p = bv.cols();
  Tensor<T> out(Shape{m, p});
  kernel::matmul_acc(av.data(), bv.data(), out.data(), m, k, p);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, m, k, p](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) kernel::matmul_nt_acc(g.data(), t.value(ib).data(), t.grad(ia).data(), m, k, p);
    if (t.requires_grad(ib)) kernel::matmul_tn_acc(t.value(ia).data(), g.data(), t.grad(ib).data(), m, k, p);
  });
}

namespace detail {

template <class T>
Tensor<T> softmax_values(const Tensor<T>& x, const AxisSplit& s, bool log_space) {
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      auto idx = [&](std::size_t k) { return (o * s.len + k) * s.inner + in; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, x[idx(k)]);
      T z{0};
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(x[idx(k)] - mx);
      if (log_space) {
        const T lz = std::log(z);
        for (std::size_t k = 0; k < s.len; ++k) out[idx(k)] = x[idx(k)] - mx - lz;
      } else {
        for (std::size_t k = 0; k < s.len; ++k) out[idx(k)] = std::exp(x[idx(k)] - mx) / z;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Max-shifted softmax along `axis` (default: trailing axis).
template <class T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Tensor<T> out = detail::softmax_values(a.value(), s, false);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        auto idx = [&](std::size_t k) { return (o * s.len + k) * s.inner + in; };
        T dot{0};
        for (std::size_t k = 0; k < s.len; ++k) dot += g[idx(k)] * y[idx(k)];
        for (std::size_t k = 0; k < s.len; ++k) ga[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
      }
    }
  });
}

template <class T>
Var<T> softmax(const Var<T>& a) {
  return softmax(a, a.shape().size() - 1);
}

template <class T>
Var<T> log_softmax(const Var<T>& a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Tensor<T> out = detail::softmax_values(a.value(), s, true);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        auto idx = [&](std::size_t k) { return (o * s.len + k) * s.inner + in; };
        T gsum{0};
        for (std::size_t k = 0; k < s.len; ++k) gsum += g[idx(k)];
        for (std::size_t k = 0; k < s.len; ++k) ga[idx(k)] += g[idx(k)] - std::exp(y[idx(k)]) * gsum;
      }
    }
  });
}

template <class T>
Var<T> log_softmax(const Var<T>& a) {
  return log_softmax(a, a.shape().size() - 1);
}

/// Normalises each trailing-axis row to zero mean / unit variance, then applies gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T{1e-5}) {
  auto& tape = detail::common_tape(x, gain);
  detail::common_tape(x, bias);
  const auto& xv = x.value();
  const std::size_t width = xv.shape().back();
  if (gain.value().rank() != 1 || gain.value().size() != width || bias.value().shape() != gain.value().shape()) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(width) + "]");
  }
  if (!(eps > T{0})) throw DomainError("layer_norm: eps must be positive");
  const std::size_t rows = xv.size() / width;
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size()), rstd(rows);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * width;
    T mu{0};
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<T>(width);
    T var{0};
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(width);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) {
      const T h = (row[c] - mu) * rstd[r];
      xhat[r * width + c] = h;
      out[r * width + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, ig, ib},
                     [ix, ig, ib, width, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       const auto& gv = t.value(ig);
                       if (t.requires_grad(ig)) {
                         auto& gg = t.grad(ig);
                         for (std::size_t i = 0; i < g.size(); ++i) gg[i % width] += g[i] * xhat[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
                       }
                       if (!t.requires_grad(ix)) return;
                       auto& gx = t.grad(ix);
                       const T inv_w = T{1} / static_cast<T>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         T m1{0}, m2{0};
                         for (std::size_t c = 0; c < width; ++c) {
                           const T d = g[r * width + c] * gv[c];
                           m1 += d;
                           m2 += d * xhat[r * width + c];
                         }
                         m1 *= inv_w;
                         m2 *= inv_w;
                         for (std::size_t c = 0; c < width; ++c) {
                           const T d = g[r * width + c] * gv[c];
                           gx[r * width + c] += rstd[r] * (d - m1 - xhat[r * width + c] * m2);
                         }
                       }
                     });
}

/// Cosine similarity between a [D] vector and every row of an [N×D] matrix.
template <class T>
Var<T> cosine_rows(const Var<T>& v, const Var<T>& m) {
  auto& tape = detail::common_tape(v, m);
  const auto& vv = v.value();
  const auto& mv = m.value();
  if (vv.rank() != 1 || mv.rank() != 2 || mv.cols() != vv.size()) {
    throw DimensionError("cosine_rows: expected [D] and [N×D], got " + to_string(vv.shape()) + " and " +
                         to_string(mv.shape()));
  }
  const std::size_t n = mv.rows(), d = mv.cols();
  auto norm = [](std::span<const T> x) {
    T s{0};
    for (T e : x) s += e * e;
    return std::sqrt(s);
  };
  const T vn = norm(vv.values());
  if (vn == T{0}) throw DomainError("cosine_rows: zero-norm query vector");
  std::vector<T> mn(n);
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    mn[i] = norm(mv.row(i));
    if (mn[i] == T{0}) throw DomainError("cosine_rows: zero-norm row " + std::to_string(i));
    T dot{0};
    for (std::size_t c = 0; c < d; ++c) dot += vv[c] * mv.at(i, c);
    out[i] = dot / (vn * mn[i]);
  }
  const std::size_t iv = v.id(), im = m.id();
  return tape.record(std::move(out), {iv, im}, [iv, im, n, d, vn, mn = std::move(mn)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& cs = t.value(self);
    const auto& vv = t.value(iv);
    const auto& mv = t.value(im);
    for (std::size_t i = 0; i < n; ++i) {
      if (t.requires_grad(iv)) {
        auto& gv = t.grad(iv);
        for (std::size_t c = 0; c < d; ++c)
          gv[c] += g[i] * (mv.at(i, c) / (vn * mn[i]) - cs[i] * vv[c] / (vn * vn));
      }
      if (t.requires_grad(im)) {
        auto& gm = t.grad(im);
        for (std::size_t c = 0; c < d; ++c)
          gm.at(i, c) += g[i] * (vv[c] / (vn * mn[i]) - cs[i] * mv.at(i, c) / (mn[i] * mn[i]));
      }
    }
  });
}

/// Rows of `base` whose flag is set are replaced by the shared `row` vector.
template <class T>
Var<T> replace_rows(const Var<T>& base, const Var<T>& row, std::span<const std::uint8_t> flags) {
  auto& tape = detail::common_tape(base, row);
  const auto& bv = base.value();
  const auto& rv = row.value();
  if (bv.rank() != 2 || rv.rank() != 1 || rv.size() != bv.cols() || flags.size() != bv.rows()) {
    throw DimensionError("replace_rows: incompatible shapes " + to_string(bv.shape()) + ", " + to_string(rv.shape()));
  }
  Tensor<T> out = bv;
  for (std::size_t r = 0; r < flags.size(); ++r) {
    if (flags[r]) std::copy(rv.values().begin(), rv.values().end(), out.row(r).begin());
  }
  const std::size_t ib = base.id(), ir = row.id();
  std::vector<std::uint8_t> fl(flags.begin(), flags.end());
  return tape.record(std::move(out), {ib, ir}, [ib, ir, fl = std::move(fl)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const std::size_t width = g.cols();
    for (std::size_t r = 0; r < fl.size(); ++r) {
      if (fl[r] && t.requires_grad(ir)) {
        auto& gr = t.grad(ir);
        for (std::size_t c = 0; c < width; ++c) gr[c] += g.at(r, c);
      } else if (!fl[r] && t.requires_grad(ib)) {
        auto& gb = t.grad(ib);
        for (std::size_t c = 0; c < width; ++c) gb.at(r, c) += g.at(r, c);
      }
    }
  });
}

/// Single element of a tensor as a scalar.
template <class T>
Var<T> element(const Var<T>& a, std::size_t index) {
  const auto& av = a.value();
  if (index >= av.size()) throw DimensionError("element index out of range");
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(av[index]), {ia}, [ia, index](Tape<T>& t, std::size_t self) {
    t.grad(ia)[index] += t.grad(self)[0];
  });
}

/// Inverted dropout; identity when p == 0.
template <class T, class Rng>
Var<T> dropout(const Var<T>& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Tensor<T> mask(a.shape());
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scale : T{0};
  return mul(a, a.tape().constant(std::move(mask)));
}

}  // namespace radarpos
