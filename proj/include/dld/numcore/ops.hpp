// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dld/numcore/tensor.hpp"

namespace dld::nc {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <class T>
T* grad_of(Node<T>& n) {
  return n.requires_grad ? n.ensure_grad() : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

enum class ElementwiseKind { add, sub, mul, relu, tanh, sigmoid, exp, log };

template <class T>
Tensor<T> binary(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<T> out(n);
  switch (kind) {
    case ElementwiseKind::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[a_scalar ? 0 : i] + pb[b_scalar ? 0 : i];
      break;
    case ElementwiseKind::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[a_scalar ? 0 : i] - pb[b_scalar ? 0 : i];
      break;
    case ElementwiseKind::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[a_scalar ? 0 : i] * pb[b_scalar ? 0 : i];
      break;
    default:
      throw ContractViolation("binary: not a binary kind");
  }
  const char* name = kind == ElementwiseKind::add ? "add" : kind == ElementwiseKind::sub ? "sub" : "mul";
  return make_result<T>(name, out_shape, std::move(out), {a, b}, [kind, a_scalar, b_scalar, n](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    const T* g = self.grad.data();
    T* ga = detail::grad_of(na);
    T* gb = detail::grad_of(nb);
    const T* va = na.value.data();
    const T* vb = nb.value.data();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t ia = a_scalar ? 0 : i;
      std::size_t ib = b_scalar ? 0 : i;
      switch (kind) {
        case ElementwiseKind::add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case ElementwiseKind::sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        default:
          if (ga) ga[ia] += g[i] * vb[ib];
          if (gb) gb[ib] += g[i] * va[ia];
          break;
      }
    }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(ElementwiseKind::add, a, b); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(ElementwiseKind::sub, a, b); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(ElementwiseKind::mul, a, b); }

namespace detail {

// Unary op from a forward map and a derivative expressed in terms of (x, y).
template <class T, class F, class D>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, D dfdx) {
  const std::size_t n = x.numel();
  const T* px = x.data().data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [dfdx, n](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    T* gi = grad_of(in);
    if (!gi) return;
    const T* g = self.grad.data();
    const T* vx = in.value.data();
    const T* vy = self.value.data();
    for (std::size_t i = 0; i < n; ++i) gi[i] += g[i] * dfdx(vx[i], vy[i]);
  });
}

template <class T, class P>
void trace_branches(const Tensor<T>& x, P pred) {
  auto& trace = BranchTrace::current();
  if (!trace.active()) return;
  std::uint64_t word = 0;
  std::size_t i = 0;
  for (T v : x.data()) {
    word = (word << 2) | static_cast<std::uint64_t>(pred(v));
    if (++i % 32 == 0) trace.mix(word);
  }
  trace.mix(word);
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  detail::trace_branches(x, [](T v) { return v > T{0}; });
  return detail::unary<T>("relu", x, [](T v) { return v > T{0} ? v : T{0}; },
                          [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>("sigmoid", x, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
                          [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x.data()[i] > T{0})) {
      throw DomainError("log: non-positive entry " + std::to_string(static_cast<double>(x.data()[i])) +
                        " at index " + std::to_string(i));
    }
  }
  return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  detail::trace_branches(x, [](T v) { return v > T{0} ? 2 : (v < T{0} ? 1 : 0); });
  return detail::unary<T>("abs", x, [](T v) { return std::abs(v); },
                          [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary<T>("scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

// max(x, lo); gradient passes only where x > lo.
template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  detail::trace_branches(x, [lo](T v) { return v > lo; });
  return detail::unary<T>("clamp_min", x, [lo](T v) { return v > lo ? v : lo; },
                          [lo](T v, T) { return v > lo ? T{1} : T{0}; });
}

template <class T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
  switch (kind) {
    case ElementwiseKind::add:
    case ElementwiseKind::sub:
    case ElementwiseKind::mul:
      if (!b) throw ContractViolation("elementwise: binary kind requires two operands");
      return binary(kind, a, *b);
    case ElementwiseKind::relu: return relu(a);
    case ElementwiseKind::tanh: return tanh(a);
    case ElementwiseKind::sigmoid: return sigmoid(a);
    case ElementwiseKind::exp: return exp(a);
    case ElementwiseKind::log: return log(a);
  }
  throw ContractViolation("elementwise: unknown kind");
}

// Value-only copy cut from the graph.
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
}

// Forward takes the values of `hard`; backward routes the incoming gradient to `soft` unchanged.
template <class T>
Tensor<T> straight_through(const Tensor<T>& hard, const Tensor<T>& soft) {
  detail::require(hard.shape() == soft.shape(), "straight_through: shape mismatch");
  std::vector<T> out(hard.data().begin(), hard.data().end());
  const std::size_t n = out.size();
  return make_result<T>("straight_through", hard.shape(), std::move(out), {soft}, [n](Node<T>& self) {
    T* gs = detail::grad_of(*self.inputs[0]);
    if (!gs) return;
    for (std::size_t i = 0; i < n; ++i) gs[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2, got " + to_string(a.shape()) +
                                                      " and " + to_string(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                                     to_string(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.data().data(), m, k) * detail::ConstMatMap<T>(b.data().data(), k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    detail::ConstMatMap<T> g(self.grad.data(), m, n);
    if (T* ga = detail::grad_of(na)) {
      detail::MatMap<T>(ga, m, k).noalias() += g * detail::ConstMatMap<T>(nb.value.data(), k, n).transpose();
    }
    if (T* gb = detail::grad_of(nb)) {
      detail::MatMap<T>(gb, k, n).noalias() += detail::ConstMatMap<T>(na.value.data(), m, k).transpose() * g;
    }
  });
}

// x[M×N] + b[N] (b may also be [1×N]).
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require(x.rank() == 2 && static_cast<int>(b.numel()) == x.dim(1),
                  "add_bias: bias " + to_string(b.shape()) + " does not match " + to_string(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* pb = b.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += pb[j];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, b}, [m, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* gx = detail::grad_of(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
    }
    if (T* gb = detail::grad_of(*self.inputs[1])) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
    }
  });
}

// x[C×...] + b[C] broadcast over the trailing extents.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require(x.rank() >= 1 && static_cast<int>(b.numel()) == x.dim(0),
                  "add_channel_bias: bias " + to_string(b.shape()) + " does not match " + to_string(x.shape()));
  const int c = x.dim(0);
  const std::size_t inner = x.numel() / static_cast<std::size_t>(c);
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* pb = b.data().data();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += pb[ch];
  return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x, b}, [c, inner](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* gx = detail::grad_of(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
    }
    if (T* gb = detail::grad_of(*self.inputs[1])) {
      for (int ch = 0; ch < c; ++ch) {
        T s{0};
        for (std::size_t i = 0; i < inner; ++i) s += g[ch * inner + i];
        gb[ch] += s;
      }
    }
  });
}

inline int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// x[C_in×H×W] * w[C_out×C_in×K_h×K_w] via im2col and one GEMM.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
  detail::require(x.rank() == 3 && w.rank() == 4, "conv2d: expected x[C,H,W] and w[O,C,Kh,Kw], got " +
                                                      to_string(x.shape()) + " and " + to_string(w.shape()));
  detail::require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  detail::require(w.dim(1) == cin, "conv2d: channel mismatch " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  detail::require(kh <= h + 2 * padding && kw <= wd + 2 * padding,
                  "conv2d: kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
  const int ho = conv_out_extent(h, kh, stride, padding);
  const int wo = conv_out_extent(wd, kw, stride, padding);
  const int rows = cin * kh * kw;
  const int cols = ho * wo;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * cols, T{0});
  const T* px = x.data().data();
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col->data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) continue;
          const T* src = px + (static_cast<std::size_t>(c) * h + iy) * wd;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - padding + kj;
            if (ix >= 0 && ix < wd) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }

  std::vector<T> out(static_cast<std::size_t>(cout) * cols);
  detail::MatMap<T>(out.data(), cout, cols).noalias() =
      detail::ConstMatMap<T>(w.data().data(), cout, rows) * detail::ConstMatMap<T>(col->data(), rows, cols);

  return make_result<T>(
      "conv2d", {cout, ho, wo}, std::move(out), {x, w},
      [col, cin, h, wd, cout, kh, kw, ho, wo, rows, cols, stride, padding](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nw = *self.inputs[1];
        detail::ConstMatMap<T> g(self.grad.data(), cout, cols);
        if (T* gw = detail::grad_of(nw)) {
          detail::MatMap<T>(gw, cout, rows).noalias() += g * detail::ConstMatMap<T>(col->data(), rows, cols).transpose();
        }
        if (T* gx = detail::grad_of(nx)) {
          detail::RowMat<T> dcol = detail::ConstMatMap<T>(nw.value.data(), cout, rows).transpose() * g;
          for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
              for (int kj = 0; kj < kw; ++kj) {
                const T* src = dcol.data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                  const int iy = oy * stride - padding + ki;
                  if (iy < 0 || iy >= h) continue;
                  T* dst = gx + (static_cast<std::size_t>(c) * h + iy) * wd;
                  for (int ox = 0; ox < wo; ++ox) {
                    const int ix = ox * stride - padding + kj;
                    if (ix >= 0 && ix < wd) dst[ix] += src[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and normalizers

enum class ReduceKind { sum, mean, max };

template <class T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& x, std::vector<int> axes) {
  const int r = x.rank();
  if (axes.empty()) throw ShapeError("reduce: empty axis list");
  std::vector<bool> reduced(static_cast<std::size_t>(r), false);
  for (int& a : axes) {
    if (a < 0) a += r;
    detail::require(a >= 0 && a < r, "reduce: axis out of range for " + to_string(x.shape()));
    detail::require(!reduced[static_cast<std::size_t>(a)], "reduce: repeated axis");
    reduced[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape;
  for (int i = 0; i < r; ++i)
    if (!reduced[static_cast<std::size_t>(i)]) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape = {1};

  // Output stride for each input axis (0 along reduced axes).
  std::vector<std::size_t> ostride(static_cast<std::size_t>(r), 0);
  std::size_t acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    if (!reduced[static_cast<std::size_t>(i)]) {
      ostride[static_cast<std::size_t>(i)] = acc;
      acc *= static_cast<std::size_t>(x.dim(i));
    }
  }
  const std::size_t n = x.numel();
  const std::size_t on = numel(out_shape);
  auto out_index = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    std::size_t o = 0;
    for (std::size_t i = 0; i < n; ++i) {
      (*out_index)[i] = o;
      for (int d = r - 1; d >= 0; --d) {
        auto du = static_cast<std::size_t>(d);
        ++idx[du];
        o += ostride[du];
        if (idx[du] < x.dim(d)) break;
        o -= ostride[du] * static_cast<std::size_t>(idx[du]);
        idx[du] = 0;
      }
    }
  }
  const std::size_t count = n / on;
  const T* px = x.data().data();
  std::vector<T> out(on, kind == ReduceKind::max ? -std::numeric_limits<T>::infinity() : T{0});
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == ReduceKind::max) {
    argmax->assign(on, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = (*out_index)[i];
      if (px[i] > out[o]) {
        out[o] = px[i];
        (*argmax)[o] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[(*out_index)[i]] += px[i];
    if (kind == ReduceKind::mean)
      for (auto& v : out) v /= static_cast<T>(count);
  }
  if (kind == ReduceKind::max && BranchTrace::current().active())
    for (std::size_t a : *argmax) BranchTrace::current().mix(a);
  const char* name = kind == ReduceKind::sum ? "sum" : kind == ReduceKind::mean ? "mean" : "max";
  return make_result<T>(name, out_shape, std::move(out), {x}, [kind, out_index, argmax, n, count](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    const T* g = self.grad.data();
    if (kind == ReduceKind::max) {
      for (std::size_t o = 0; o < argmax->size(); ++o) gx[(*argmax)[o]] += g[o];
      return;
    }
    const T f = kind == ReduceKind::mean ? T{1} / static_cast<T>(count) : T{1};
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[(*out_index)[i]] * f;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return make_result<T>("sum_all", {1}, {static_cast<T>(s)}, {x}, [n](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

namespace detail {

struct AxisLayout {
  std::size_t outer, len, inner;
};

inline AxisLayout axis_layout(const Shape& s, int axis) {
  AxisLayout l{1, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) l.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) l.inner *= static_cast<std::size_t>(s[i]);
  return l;
}

inline int normalize_axis(const Shape& s, int axis, const char* op) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range for " + to_string(s));
  if (s[static_cast<std::size_t>(axis)] == 0) throw ShapeError(std::string(op) + ": empty axis");
  return axis;
}

template <class T>
void log_softmax_values(const T* x, T* y, AxisLayout l) {
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) m = std::max(m, x[base + k * l.inner]);
      T s{0};
      for (std::size_t k = 0; k < l.len; ++k) s += std::exp(x[base + k * l.inner] - m);
      const T lse = m + std::log(s);
      for (std::size_t k = 0; k < l.len; ++k) y[base + k * l.inner] = x[base + k * l.inner] - lse;
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(x.shape(), axis, "log_softmax");
  const auto l = detail::axis_layout(x.shape(), axis);
  std::vector<T> out(x.numel());
  detail::log_softmax_values(x.data().data(), out.data(), l);
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T gs{0};
        for (std::size_t k = 0; k < l.len; ++k) gs += g[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t i = base + k * l.inner;
          gx[i] += g[i] - std::exp(y[i]) * gs;
        }
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(x.shape(), axis, "softmax");
  const auto l = detail::axis_layout(x.shape(), axis);
  std::vector<T> out(x.numel());
  detail::log_softmax_values(x.data().data(), out.data(), l);
  for (auto& v : out) v = std::exp(v);
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T dot{0};
        for (std::size_t k = 0; k < l.len; ++k) dot += g[base + k * l.inner] * y[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t i = base + k * l.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// log Σ exp(x) over every element.
template <class T>
Tensor<T> logsumexp(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  T m = -std::numeric_limits<T>::infinity();
  for (T v : x.data()) m = std::max(m, v);
  T s{0};
  for (T v : x.data()) s += std::exp(v - m);
  const T lse = m + std::log(s);
  return make_result<T>("logsumexp", {1}, {lse}, {x}, [n](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    const T* v = self.inputs[0]->value.data();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0] * std::exp(v[i] - self.value[0]);
  });
}

// ---------------------------------------------------------------------------
// Spatial resampling

struct Box {
  double y0, x0, y1, x1;  // continuous edges in source pixel units
};

namespace detail {

struct Tap {
  int lo, hi;
  double w;  // weight of hi
};

// Half-pixel-centre sampling: src = start + (i+0.5)·extent/out − 0.5, clamped to [0, in−1].
inline std::vector<Tap> resample_taps(double start, double extent, int out, int in) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    double s = start + (i + 0.5) * extent / out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    int lo = static_cast<int>(std::floor(s));
    int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, s - lo};
  }
  return taps;
}

}  // namespace detail

// Bilinear sampling of the box region of x[C×H×W] onto an out_h×out_w grid.
template <class T>
Tensor<T> roi_align(const Tensor<T>& x, Box box, int out_h, int out_w) {
  detail::require(x.rank() == 3, "roi_align: expected [C,H,W], got " + to_string(x.shape()));
  detail::require(out_h >= 1 && out_w >= 1, "roi_align: output extents must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<std::vector<detail::Tap>>(detail::resample_taps(box.y0, box.y1 - box.y0, out_h, h));
  auto tx = std::make_shared<std::vector<detail::Tap>>(detail::resample_taps(box.x0, box.x1 - box.x0, out_w, w));
  std::vector<T> out(static_cast<std::size_t>(c) * out_h * out_w);
  const T* px = x.data().data();
  for (int ch = 0; ch < c; ++ch) {
    const T* src = px + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const auto& a = (*ty)[static_cast<std::size_t>(i)];
      const T wy = static_cast<T>(a.w);
      for (int j = 0; j < out_w; ++j) {
        const auto& b = (*tx)[static_cast<std::size_t>(j)];
        const T wx = static_cast<T>(b.w);
        const T top = (T{1} - wx) * src[a.lo * w + b.lo] + wx * src[a.lo * w + b.hi];
        const T bot = (T{1} - wx) * src[a.hi * w + b.lo] + wx * src[a.hi * w + b.hi];
        dst[i * out_w + j] = (T{1} - wy) * top + wy * bot;
      }
    }
  }
  return make_result<T>("roi_align", {c, out_h, out_w}, std::move(out), {x},
                        [ty, tx, c, h, w, out_h, out_w](Node<T>& self) {
                          T* gx = detail::grad_of(*self.inputs[0]);
                          if (!gx) return;
                          for (int ch = 0; ch < c; ++ch) {
                            T* dst = gx + static_cast<std::size_t>(ch) * h * w;
                            const T* g = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
                            for (int i = 0; i < out_h; ++i) {
                              const auto& a = (*ty)[static_cast<std::size_t>(i)];
                              const T wy = static_cast<T>(a.w);
                              for (int j = 0; j < out_w; ++j) {
                                const auto& b = (*tx)[static_cast<std::size_t>(j)];
                                const T wx = static_cast<T>(b.w);
                                const T gv = g[i * out_w + j];
                                dst[a.lo * w + b.lo] += gv * (T{1} - wy) * (T{1} - wx);
                                dst[a.lo * w + b.hi] += gv * (T{1} - wy) * wx;
                                dst[a.hi * w + b.lo] += gv * wy * (T{1} - wx);
                                dst[a.hi * w + b.hi] += gv * wy * wx;
                              }
                            }
                          }
                        });
}

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  detail::require(x.rank() == 3, "bilinear_resize: expected [C,H,W], got " + to_string(x.shape()));
  return roi_align(x, Box{0.0, 0.0, static_cast<double>(x.dim(1)), static_cast<double>(x.dim(2))}, out_h, out_w);
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.numel(),
                  "reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  const std::size_t n = out.size();
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [n](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require(x.rank() == 2, "transpose: expected rank 2, got " + to_string(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.numel());
  detail::MatMap<T>(out.data(), n, m) = detail::ConstMatMap<T>(x.data().data(), m, n).transpose();
  return make_result<T>("transpose", {n, m}, std::move(out), {x}, [m, n](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    detail::MatMap<T>(gx, m, n) += detail::ConstMatMap<T>(self.grad.data(), n, m).transpose();
  });
}

// Rows [start, start+len) of x[M×N].
template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, int start, int len) {
  detail::require(x.rank() == 2 && start >= 0 && len >= 1 && start + len <= x.dim(0),
                  "slice_rows: range out of bounds for " + to_string(x.shape()));
  const int n = x.dim(1);
  const auto off = static_cast<std::size_t>(start) * n;
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(off),
                     x.data().begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(len) * n));
  return make_result<T>("slice_rows", {len, n}, std::move(out), {x}, [off](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[off + i] += self.grad[i];
  });
}

// Columns [start, start+len) of x[M×N].
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int len) {
  detail::require(x.rank() == 2 && start >= 0 && len >= 1 && start + len <= x.dim(1),
                  "slice_cols: range out of bounds for " + to_string(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m) * len);
  const T* px = x.data().data();
  for (int i = 0; i < m; ++i)
    std::copy_n(px + static_cast<std::size_t>(i) * n + start, len, out.data() + static_cast<std::size_t>(i) * len);
  return make_result<T>("slice_cols", {m, len}, std::move(out), {x}, [m, n, start, len](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        gx[static_cast<std::size_t>(i) * n + start + j] += self.grad[static_cast<std::size_t>(i) * len + j];
  });
}

// Horizontal concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const int m = parts[0].dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == m, "concat_cols: row mismatch at " + to_string(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(m) * total);
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    const int wk = widths[k];
    for (int i = 0; i < m; ++i)
      std::copy_n(src + static_cast<std::size_t>(i) * wk, wk, out.data() + static_cast<std::size_t>(i) * total + off);
    off += wk;
  }
  return make_result<T>("concat_cols", {m, total}, std::move(out), parts, [m, total, widths](Node<T>& self) {
    int o = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const int wk = widths[k];
      if (T* gk = detail::grad_of(*self.inputs[k])) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < wk; ++j)
            gk[static_cast<std::size_t>(i) * wk + j] += self.grad[static_cast<std::size_t>(i) * total + o + j];
      }
      o += wk;
    }
  });
}

// Vertical concatenation of matrices with equal column counts.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const int n = parts[0].dim(-1);
  int total = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    detail::require(p.dim(-1) == n && p.rank() <= 2, "concat_rows: column mismatch at " + to_string(p.shape()));
    total += static_cast<int>(p.numel()) / n;
    sizes.push_back(p.numel());
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(total) * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>("concat_rows", {total, n}, std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (T* gk = detail::grad_of(*self.inputs[k])) {
        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

// Rows of table[V×E] at the given indices (embedding lookup).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& index) {
  detail::require(table.rank() == 2 && !index.empty(), "gather_rows: expected [V,E] table and indices");
  const int v = table.dim(0), e = table.dim(1);
  std::vector<T> out(index.size() * static_cast<std::size_t>(e));
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= v) throw ContractViolation("gather_rows: index " + std::to_string(index[r]) + " out of range");
    std::copy_n(table.data().data() + static_cast<std::size_t>(index[r]) * e, e, out.data() + r * e);
  }
  return make_result<T>("gather_rows", {static_cast<int>(index.size()), e}, std::move(out), {table},
                        [index, e](Node<T>& self) {
                          T* gt = detail::grad_of(*self.inputs[0]);
                          if (!gt) return;
                          for (std::size_t r = 0; r < index.size(); ++r)
                            for (int j = 0; j < e; ++j)
                              gt[static_cast<std::size_t>(index[r]) * e + j] += self.grad[r * e + j];
                        });
}

// out[i] = x[i, index[i]] for x[M×N].
template <class T>
Tensor<T> pick(const Tensor<T>& x, const std::vector<int>& index) {
  detail::require(x.rank() == 2 && static_cast<int>(index.size()) == x.dim(0),
                  "pick: need one index per row of " + to_string(x.shape()));
  const int n = x.dim(1);
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) throw ContractViolation("pick: index " + std::to_string(index[i]) + " out of range");
    out[i] = x.data()[i * n + static_cast<std::size_t>(index[i])];
  }
  return make_result<T>("pick", {static_cast<int>(index.size())}, std::move(out), {x}, [index, n](Node<T>& self) {
    T* gx = detail::grad_of(*self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < index.size(); ++i) gx[i * n + static_cast<std::size_t>(index[i])] += self.grad[i];
  });
}

// Single element as a [1] tensor.
template <class T>
Tensor<T> element(const Tensor<T>& x, std::size_t i) {
  detail::require(i < x.numel(), "element: index out of range");
  return make_result<T>("element", {1}, {x.data()[i]}, {x}, [i](Node<T>& self) {
    if (T* gx = detail::grad_of(*self.inputs[0])) gx[i] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Recurrent cell

// gates[B×4H] ordered (input, forget, cell, output); c_prev[B×H]. Returns [B×2H] = [h | c].
template <class T>
Tensor<T> lstm_cell(const Tensor<T>& gates, const Tensor<T>& c_prev) {
  detail::require(gates.rank() == 2 && c_prev.rank() == 2 && gates.dim(0) == c_prev.dim(0) &&
                      gates.dim(1) == 4 * c_prev.dim(1),
                  "lstm_cell: gates " + to_string(gates.shape()) + " incompatible with state " + to_string(c_prev.shape()));
  const int b = c_prev.dim(0), hsz = c_prev.dim(1);
  const std::size_t cells = static_cast<std::size_t>(b) * hsz;
  // i, f, g, o, tanh(c)
  auto act = std::make_shared<std::vector<T>>(cells * 5);
  std::vector<T> out(cells * 2);
  const T* pg = gates.data().data();
  const T* pc = c_prev.data().data();
  auto sig = [](T v) { return T{1} / (T{1} + std::exp(-v)); };
  for (int r = 0; r < b; ++r) {
    for (int j = 0; j < hsz; ++j) {
      const std::size_t k = static_cast<std::size_t>(r) * hsz + j;
      const T* gr = pg + static_cast<std::size_t>(r) * 4 * hsz;
      const T i = sig(gr[j]), f = sig(gr[hsz + j]), g = std::tanh(gr[2 * hsz + j]), o = sig(gr[3 * hsz + j]);
      const T c = f * pc[k] + i * g;
      const T tc = std::tanh(c);
      (*act)[k * 5 + 0] = i;
      (*act)[k * 5 + 1] = f;
      (*act)[k * 5 + 2] = g;
      (*act)[k * 5 + 3] = o;
      (*act)[k * 5 + 4] = tc;
      out[static_cast<std::size_t>(r) * 2 * hsz + j] = o * tc;
      out[static_cast<std::size_t>(r) * 2 * hsz + hsz + j] = c;
    }
  }
  return make_result<T>("lstm_cell", {b, 2 * hsz}, std::move(out), {gates, c_prev}, [act, b, hsz](Node<T>& self) {
    T* gg = detail::grad_of(*self.inputs[0]);
    T* gc = detail::grad_of(*self.inputs[1]);
    const T* pc = self.inputs[1]->value.data();
    for (int r = 0; r < b; ++r) {
      for (int j = 0; j < hsz; ++j) {
        const std::size_t k = static_cast<std::size_t>(r) * hsz + j;
        const T i = (*act)[k * 5 + 0], f = (*act)[k * 5 + 1], g = (*act)[k * 5 + 2], o = (*act)[k * 5 + 3],
                tc = (*act)[k * 5 + 4];
        const T dh = self.grad[static_cast<std::size_t>(r) * 2 * hsz + j];
        const T dc = self.grad[static_cast<std::size_t>(r) * 2 * hsz + hsz + j] + dh * o * (T{1} - tc * tc);
        if (gg) {
          T* gr = gg + static_cast<std::size_t>(r) * 4 * hsz;
          gr[j] += dc * g * i * (T{1} - i);
          gr[hsz + j] += dc * pc[k] * f * (T{1} - f);
          gr[2 * hsz + j] += dc * i * (T{1} - g * g);
          gr[3 * hsz + j] += dh * tc * o * (T{1} - o);
        }
        if (gc) gc[k] += dc * f;
      }
    }
  });
}

}  // namespace dld::nc
