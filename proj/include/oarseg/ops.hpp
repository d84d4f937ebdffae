// Copyright 2026 The oarseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable tensor primitives. Each op computes its forward values
// eagerly and records a closure that accumulates input gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oarseg/tensor.hpp"

namespace oarseg {

// -----------------------------------------------------------------------------
// Broadcasting helpers

struct BroadcastPlan {
  Shape out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape pa(nd, 1), pb(nd, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(nd - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(nd - b.size()));
  BroadcastPlan p;
  p.out.resize(nd);
  const auto sa = strides_of(pa), sb = strides_of(pb);
  p.stride_a.resize(nd);
  p.stride_b.resize(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t nd = p.out.size();
  if (nd == 0) {
    f(Index{0}, Index{0}, Index{0});
    return;
  }
  const Index inner = p.out[nd - 1];
  const Index ia_step = p.stride_a[nd - 1], ib_step = p.stride_b[nd - 1];
  const Index total = numel_of(p.out);
  std::vector<Index> counter(nd, 0);
  Index ia = 0, ib = 0;
  for (Index io = 0; io < total; io += inner) {
    for (Index j = 0; j < inner; ++j) f(io + j, ia + j * ia_step, ib + j * ib_step);
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++counter[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      ia -= p.stride_a[d] * counter[d];
      ib -= p.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C(m x n) (+)= op(A) * op(B), all buffers row-major. A is (m x k) or, when
// transposed, stored as (k x m); likewise B is (k x n) or stored as (n x k).
template <typename T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const T* a, const T* b, T* c,
          bool accumulate) {
  using CMap = Eigen::Map<const MatR<T>>;
  Eigen::Map<MatR<T>> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += CMap(a, m, k) * CMap(b, k, n);
  } else if (!trans_a && trans_b) {
    cm.noalias() += CMap(a, m, k) * CMap(b, n, k).transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += CMap(a, k, m).transpose() * CMap(b, k, n);
  } else {
    cm.noalias() += CMap(a, k, m).transpose() * CMap(b, n, k).transpose();
  }
}

inline int normalize_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ndim));
  }
  return a;
}

// Splits a shape around one axis into (outer, axis length, inner).
inline std::array<Index, 3> split_axis(const Shape& s, int axis) {
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[static_cast<std::size_t>(axis)], inner};
}

}  // namespace detail

// -----------------------------------------------------------------------------
// Elementwise

// Generic broadcasting binary op; da/db give the partials of f w.r.t. each operand.
template <typename T, class F, class DA, class DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const T* av = a.raw();
  const T* bv = b.raw();
  if (a.shape() == b.shape()) {
    const Index n = a.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    return make_result<T>(name, a.shape(), std::move(out), {a, b}, [da, db](Node<T>& o) {
      const T* g = o.grad.data();
      const T* x = o.in(0).value.data();
      const T* y = o.in(1).value.data();
      const std::size_t n = o.value.size();
      if (o.input_needs_grad(0)) {
        T* gx = o.in(0).grad_data();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * da(x[i], y[i], o.value[i]);
      }
      if (o.input_needs_grad(1)) {
        T* gy = o.in(1).grad_data();
        for (std::size_t i = 0; i < n; ++i) gy[i] += g[i] * db(x[i], y[i], o.value[i]);
      }
    });
  }
  auto plan = std::make_shared<BroadcastPlan>(broadcast_plan(a.shape(), b.shape()));
  std::vector<T> out(static_cast<std::size_t>(numel_of(plan->out)));
  for_each_broadcast(*plan, [&](Index io, Index ia, Index ib) { out[io] = f(av[ia], bv[ib]); });
  return make_result<T>(name, plan->out, std::move(out), {a, b}, [plan, da, db](Node<T>& o) {
    const T* g = o.grad.data();
    const T* x = o.in(0).value.data();
    const T* y = o.in(1).value.data();
    const T* ov = o.value.data();
    T* gx = o.input_needs_grad(0) ? o.in(0).grad_data() : nullptr;
    T* gy = o.input_needs_grad(1) ? o.in(1).grad_data() : nullptr;
    for_each_broadcast(*plan, [&](Index io, Index ia, Index ib) {
      if (gx) gx[ia] += g[io] * da(x[ia], y[ib], ov[io]);
      if (gy) gy[ib] += g[io] * db(x[ia], y[ib], ov[io]);
    });
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T o) { return -o / y; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <typename T, class F, class D>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, D dfdx) {
  const Index n = x.numel();
  const T* xv = x.raw();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[i] = f(xv[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [dfdx](Node<T>& o) {
    const T* g = o.grad.data();
    const T* xi = o.in(0).value.data();
    T* gx = o.in(0).grad_data();
    for (std::size_t i = 0; i < o.value.size(); ++i) gx[i] += g[i] * dfdx(xi[i], o.value[i]);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return unary_op<T>("scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary_op<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) { return scale(x, T(-1)); }

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_op<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// Exact Gaussian-CDF GeLU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary_op<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

// Identity with a custom gradient multiplier; used by harness sanity checks.
template <typename T>
Tensor<T> identity(const Tensor<T>& x) {
  return unary_op<T>("identity", x, [](T v) { return v; }, [](T, T) { return T(1); });
}

// -----------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>("sum", {1}, {s}, {x}, [](Node<T>& o) {
    const T g = o.grad[0];
    T* gx = o.in(0).grad_data();
    for (std::size_t i = 0; i < o.in(0).value.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false) {
  axis = detail::normalize_axis(axis, x.ndim());
  const auto [outer, len, inner] = detail::split_axis(x.shape(), axis);
  Shape s = x.shape();
  if (keepdim) {
    s[static_cast<std::size_t>(axis)] = 1;
  } else {
    s.erase(s.begin() + axis);
    if (s.empty()) s = {1};
  }
  std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
  const T* xv = x.raw();
  for (Index o = 0; o < outer; ++o)
    for (Index l = 0; l < len; ++l)
      for (Index i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  return make_result<T>("sum_axis", s, std::move(out), {x}, [outer, len, inner](Node<T>& o) {
    const T* g = o.grad.data();
    T* gx = o.in(0).grad_data();
    for (Index a = 0; a < outer; ++a)
      for (Index l = 0; l < len; ++l)
        for (Index i = 0; i < inner; ++i) gx[(a * len + l) * inner + i] += g[a * inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false) {
  const int a = detail::normalize_axis(axis, x.ndim());
  return scale(sum(x, a, keepdim), T(1) / static_cast<T>(x.dim(a)));
}

// -----------------------------------------------------------------------------
// Layout ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape allows a single -1 extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " into " + to_string(shape));
  }
  return make_result<T>("reshape", shape, std::vector<T>(x.data().begin(), x.data().end()), {x},
                        [](Node<T>& o) {
                          T* gx = o.in(0).grad_data();
                          for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
                        });
}

// out[i] = x[index[i]], or 0 where index[i] < 0. The backward is a scatter-add.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index,
                 const char* name = "gather") {
  if (numel_of(out_shape) != static_cast<Index>(index->size())) {
    throw DimensionError("gather index size does not match output shape");
  }
  std::vector<T> out(index->size());
  const T* xv = x.raw();
  for (std::size_t i = 0; i < index->size(); ++i) {
    const Index j = (*index)[i];
    out[i] = j >= 0 ? xv[j] : T(0);
  }
  return make_result<T>(name, std::move(out_shape), std::move(out), {x}, [index](Node<T>& o) {
    T* gx = o.in(0).grad_data();
    const T* g = o.grad.data();
    for (std::size_t i = 0; i < index->size(); ++i) {
      const Index j = (*index)[i];
      if (j >= 0) gx[j] += g[i];
    }
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) throw DimensionError("permute rank mismatch");
  const auto st = strides_of(x.shape());
  Shape out_shape(static_cast<std::size_t>(nd));
  std::vector<Index> src_stride(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(perm[i])];
    src_stride[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(perm[i])];
  }
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  BroadcastPlan p;
  p.out = out_shape;
  p.stride_a = src_stride;
  p.stride_b.assign(static_cast<std::size_t>(nd), 0);
  for_each_broadcast(p, [&](Index io, Index ia, Index) { (*idx)[io] = ia; });
  return gather(x, out_shape, idx, "permute");
}

// Zero padding; pads[i] = (before, after) for axis i.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<Index, Index>>& pads) {
  const int nd = x.ndim();
  if (static_cast<int>(pads.size()) != nd) throw DimensionError("pad needs one entry per axis");
  Shape out_shape = x.shape();
  for (int i = 0; i < nd; ++i) {
    out_shape[i] += pads[i].first + pads[i].second;
    if (pads[i].first < 0 || pads[i].second < 0) throw DimensionError("negative padding");
  }
  const auto st = strides_of(x.shape());
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(numel_of(out_shape)));
  std::vector<Index> c(static_cast<std::size_t>(nd), 0);
  for (std::size_t flat = 0; flat < idx->size(); ++flat) {
    Index src = 0;
    bool inside = true;
    for (int d = 0; d < nd; ++d) {
      const Index s = c[d] - pads[d].first;
      if (s < 0 || s >= x.shape()[d]) {
        inside = false;
        break;
      }
      src += s * st[d];
    }
    (*idx)[flat] = inside ? src : -1;
    for (int d = nd - 1; d >= 0; --d) {
      if (++c[d] < out_shape[d]) break;
      c[d] = 0;
    }
  }
  return gather(x, out_shape, idx, "pad");
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<Index>& start, const Shape& size) {
  const int nd = x.ndim();
  if (static_cast<int>(start.size()) != nd || static_cast<int>(size.size()) != nd) {
    throw DimensionError("crop needs one start/size per axis");
  }
  for (int d = 0; d < nd; ++d) {
    if (start[d] < 0 || size[d] < 1 || start[d] + size[d] > x.shape()[d]) {
      throw DimensionError("crop window outside tensor " + to_string(x.shape()));
    }
  }
  const auto st = strides_of(x.shape());
  BroadcastPlan p;
  p.out = size;
  p.stride_a = st;
  p.stride_b.assign(static_cast<std::size_t>(nd), 0);
  Index base = 0;
  for (int d = 0; d < nd; ++d) base += start[d] * st[d];
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(numel_of(size)));
  for_each_broadcast(p, [&](Index io, Index ia, Index) { (*idx)[io] = base + ia; });
  return gather(x, size, idx, "crop");
}

// Cyclic shift: out[(i + shift) mod n] = x[i] along each axis.
template <typename T>
Tensor<T> roll(const Tensor<T>& x, const std::vector<Index>& shifts) {
  const int nd = x.ndim();
  if (static_cast<int>(shifts.size()) != nd) throw DimensionError("roll needs one shift per axis");
  const auto st = strides_of(x.shape());
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  std::vector<Index> c(static_cast<std::size_t>(nd), 0);
  for (std::size_t flat = 0; flat < idx->size(); ++flat) {
    Index src = 0;
    for (int d = 0; d < nd; ++d) {
      const Index n = x.shape()[d];
      src += (((c[d] - shifts[d]) % n + n) % n) * st[d];
    }
    (*idx)[flat] = src;
    for (int d = nd - 1; d >= 0; --d) {
      if (++c[d] < x.shape()[d]) break;
      c[d] = 0;
    }
  }
  return gather(x, x.shape(), idx, "roll");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  axis = detail::normalize_axis(axis, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != parts[0].ndim()) throw DimensionError("concat rank mismatch");
    for (int d = 0; d < p.ndim(); ++d) {
      if (d != axis && p.shape()[d] != out_shape[d]) {
        throw DimensionError("concat extent mismatch: " + to_string(p.shape()) + " vs " +
                             to_string(out_shape));
      }
    }
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  const auto [outer, len_unused, inner] = detail::split_axis(out_shape, axis);
  (void)len_unused;
  std::vector<T> out(static_cast<std::size_t>(numel_of(out_shape)));
  std::vector<Index> lens;
  Index off = 0;
  for (const auto& p : parts) {
    const Index l = p.shape()[axis];
    lens.push_back(l);
    const T* pv = p.raw();
    for (Index o = 0; o < outer; ++o) {
      std::copy(pv + o * l * inner, pv + (o + 1) * l * inner,
                out.begin() + (o * total + off) * inner);
    }
    off += l;
  }
  return make_result<T>("concat", out_shape, std::move(out), parts,
                        [lens, outer = outer, inner = inner, total](Node<T>& o) {
                          Index offset = 0;
                          for (std::size_t k = 0; k < lens.size(); ++k) {
                            const Index l = lens[k];
                            if (o.input_needs_grad(k)) {
                              T* g = o.in(k).grad_data();
                              for (Index a = 0; a < outer; ++a)
                                for (Index j = 0; j < l * inner; ++j)
                                  g[a * l * inner + j] += o.grad[(a * total + offset) * inner + j];
                            }
                            offset += l;
                          }
                        });
}

// -----------------------------------------------------------------------------
// Linear algebra

enum class Transpose { No, Yes };

// Batched product a[..., m, k] . b[..., k, n] with broadcast batch extents.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Transpose ta = Transpose::No,
                 Transpose tb = Transpose::No) {
  if (a.ndim() < 2 || b.ndim() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const bool tra = ta == Transpose::Yes, trb = tb == Transpose::Yes;
  const Index m = tra ? a.dim(-1) : a.dim(-2);
  const Index ka = tra ? a.dim(-2) : a.dim(-1);
  const Index kb = trb ? b.dim(-1) : b.dim(-2);
  const Index n = trb ? b.dim(-2) : b.dim(-1);
  if (ka != kb) {
    throw DimensionError("matmul inner extents differ: " + to_string(a.shape()) + " . " +
                         to_string(b.shape()));
  }
  const Index k = ka;
  const Shape ba(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  auto plan = std::make_shared<BroadcastPlan>(broadcast_plan(ba, bb));
  Shape out_shape = plan->out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const Index sa = m * k, sb = k * n, sc = m * n;
  std::vector<T> out(static_cast<std::size_t>(numel_of(out_shape)));

  // Rank-2 right operand with untransposed left: fold all batch rows into one GEMM.
  const bool fold = bb.empty() && !tra;
  if (fold) {
    const Index rows = a.numel() / k;
    detail::gemm<T>(false, trb, rows, n, k, a.raw(), b.raw(), out.data(), false);
  } else {
    for_each_broadcast(*plan, [&](Index io, Index ia, Index ib) {
      detail::gemm<T>(tra, trb, m, n, k, a.raw() + ia * sa, b.raw() + ib * sb,
                      out.data() + io * sc, false);
    });
  }
  return make_result<T>(
      "matmul", out_shape, std::move(out), {a, b},
      [plan, tra, trb, m, n, k, sa, sb, sc, fold](Node<T>& o) {
        const T* g = o.grad.data();
        const T* av = o.in(0).value.data();
        const T* bv = o.in(1).value.data();
        if (fold) {
          const Index rows = static_cast<Index>(o.in(0).value.size()) / k;
          if (o.input_needs_grad(0)) {
            // dA = G . op(B)^T
            detail::gemm<T>(false, !trb, rows, k, n, g, bv, o.in(0).grad_data(), true);
          }
          if (o.input_needs_grad(1)) {
            T* gb = o.in(1).grad_data();
            if (!trb) detail::gemm<T>(true, false, k, n, rows, av, g, gb, true);
            else detail::gemm<T>(true, false, n, k, rows, g, av, gb, true);
          }
          return;
        }
        T* ga = o.input_needs_grad(0) ? o.in(0).grad_data() : nullptr;
        T* gb = o.input_needs_grad(1) ? o.in(1).grad_data() : nullptr;
        for_each_broadcast(*plan, [&](Index io, Index ia, Index ib) {
          const T* gc = g + io * sc;
          if (ga) {
            if (!tra) detail::gemm<T>(false, !trb, m, k, n, gc, bv + ib * sb, ga + ia * sa, true);
            else detail::gemm<T>(trb, true, k, m, n, bv + ib * sb, gc, ga + ia * sa, true);
          }
          if (gb) {
            if (!trb) detail::gemm<T>(!tra, false, k, n, m, av + ia * sa, gc, gb + ib * sb, true);
            else detail::gemm<T>(true, tra, n, k, m, gc, av + ia * sa, gb + ib * sb, true);
          }
        });
      });
}

// -----------------------------------------------------------------------------
// Convolution family (NCHW)

enum class Padding { Same, Valid };

struct Conv2dOptions {
  Index stride = 1;
  Index dilation = 1;
  Padding padding = Padding::Same;
};

namespace detail {

struct ConvGeom {
  Index n, cin, h, w, cout, kh, kw, stride, dil, ph, pw, ho, wo;
  Index k() const { return cin * kh * kw; }
  Index p() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.p();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.ph + ki * g.dil;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pw + kj * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const ConvGeom& g, const T* col, T* x) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.p();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.ph + ki * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (c * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pw + kj * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation of x[N,Cin,H,W] with kernel[Cout,Cin,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const std::optional<std::type_identity_t<Tensor<T>>>& bias,
                 Conv2dOptions opt = {}) {
  if (x.ndim() != 4 || kernel.ndim() != 4) throw DimensionError("conv2d expects rank-4 input and kernel");
  if (x.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d input has " + std::to_string(x.dim(1)) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
  }
  if (opt.stride < 1 || opt.dilation < 1) throw DimensionError("conv2d stride/dilation must be >= 1");
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                     opt.stride, opt.dilation, 0, 0, 0, 0};
  if (opt.padding == Padding::Same) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("same padding needs odd kernel extents");
    g.ph = g.dil * (g.kh - 1) / 2;
    g.pw = g.dil * (g.kw - 1) / 2;
  }
  g.ho = (g.h + 2 * g.ph - g.dil * (g.kh - 1) - 1) / g.stride + 1;
  g.wo = (g.w + 2 * g.pw - g.dil * (g.kw - 1) - 1) / g.stride + 1;
  if (g.ho < 1 || g.wo < 1) throw DimensionError("conv2d kernel larger than input " + to_string(x.shape()));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != g.cout)) throw DimensionError("conv2d bias extent mismatch");

  std::vector<T> out(static_cast<std::size_t>(g.n * g.cout * g.p()));
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k() * g.p()));
  const T* xv = x.raw();
  for (Index b = 0; b < g.n; ++b) {
    const T* xb = xv + b * g.cin * g.h * g.w;
    const T* src = xb;
    if (!g.pointwise()) {
      detail::im2col(g, xb, col.data());
      src = col.data();
    }
    detail::gemm<T>(false, false, g.cout, g.p(), g.k(), kernel.raw(), src, out.data() + b * g.cout * g.p(),
                    false);
    if (bias) {
      const T* bv = bias->raw();
      for (Index c = 0; c < g.cout; ++c) {
        T* o = out.data() + (b * g.cout + c) * g.p();
        for (Index i = 0; i < g.p(); ++i) o[i] += bv[c];
      }
    }
  }
  std::vector<Tensor<T>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result<T>("conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), inputs,
                        [g, has_bias](Node<T>& o) {
                          const T* gout = o.grad.data();
                          const T* xv = o.in(0).value.data();
                          const T* wv = o.in(1).value.data();
                          const bool need_x = o.input_needs_grad(0);
                          const bool need_w = o.input_needs_grad(1);
                          T* gx = need_x ? o.in(0).grad_data() : nullptr;
                          T* gw = need_w ? o.in(1).grad_data() : nullptr;
                          std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k() * g.p()));
                          for (Index b = 0; b < g.n; ++b) {
                            const T* gb = gout + b * g.cout * g.p();
                            const T* xb = xv + b * g.cin * g.h * g.w;
                            if (need_w) {
                              const T* src = xb;
                              if (!g.pointwise()) {
                                detail::im2col(g, xb, col.data());
                                src = col.data();
                              }
                              detail::gemm<T>(false, true, g.cout, g.k(), g.p(), gb, src, gw, true);
                            }
                            if (need_x) {
                              T* gxb = gx + b * g.cin * g.h * g.w;
                              if (g.pointwise()) {
                                detail::gemm<T>(true, false, g.k(), g.p(), g.cout, wv, gb, gxb, true);
                              } else {
                                detail::gemm<T>(true, false, g.k(), g.p(), g.cout, wv, gb, col.data(), false);
                                detail::col2im(g, col.data(), gxb);
                              }
                            }
                          }
                          if (has_bias && o.input_needs_grad(2)) {
                            T* gbias = o.in(2).grad_data();
                            for (Index b = 0; b < g.n; ++b)
                              for (Index c = 0; c < g.cout; ++c) {
                                const T* gr = gout + (b * g.cout + c) * g.p();
                                T s = 0;
                                for (Index i = 0; i < g.p(); ++i) s += gr[i];
                                gbias[c] += s;
                              }
                          }
                        });
}

// Transposed convolution with kernel == stride (non-overlapping taps):
// x[N,Cin,H,W], kernel[Cin,Cout,k,k] -> [N,Cout,kH,kW].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel, const std::optional<std::type_identity_t<Tensor<T>>>& bias) {
  if (x.ndim() != 4 || kernel.ndim() != 4) throw DimensionError("conv_transpose2d expects rank-4 tensors");
  if (x.dim(1) != kernel.dim(0)) throw DimensionError("conv_transpose2d channel mismatch");
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv_transpose2d needs a square kernel");
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(1), k = kernel.dim(2);
  const Index hw = h * w, rows = cout * k * k;
  const Index ho = h * k, wo = w * k;
  std::vector<T> out(static_cast<std::size_t>(n * cout * ho * wo));
  std::vector<T> tmp(static_cast<std::size_t>(rows * hw));
  for (Index b = 0; b < n; ++b) {
    detail::gemm<T>(true, false, rows, hw, cin, kernel.raw(), x.raw() + b * cin * hw, tmp.data(), false);
    T* ob = out.data() + b * cout * ho * wo;
    for (Index co = 0; co < cout; ++co)
      for (Index a = 0; a < k; ++a)
        for (Index c = 0; c < k; ++c) {
          const T* src = tmp.data() + ((co * k + a) * k + c) * hw;
          const T bv = bias ? bias->raw()[co] : T(0);
          for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j) ob[(co * ho + i * k + a) * wo + j * k + c] = src[i * w + j] + bv;
        }
  }
  std::vector<Tensor<T>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result<T>(
      "conv_transpose2d", {n, cout, ho, wo}, std::move(out), inputs,
      [=](Node<T>& o) {
        std::vector<T> gt(static_cast<std::size_t>(rows * hw));
        const T* g = o.grad.data();
        for (Index b = 0; b < n; ++b) {
          const T* gb = g + b * cout * ho * wo;
          for (Index co = 0; co < cout; ++co)
            for (Index a = 0; a < k; ++a)
              for (Index c = 0; c < k; ++c) {
                T* dst = gt.data() + ((co * k + a) * k + c) * hw;
                for (Index i = 0; i < h; ++i)
                  for (Index j = 0; j < w; ++j) dst[i * w + j] = gb[(co * ho + i * k + a) * wo + j * k + c];
              }
          if (o.input_needs_grad(0)) {
            detail::gemm<T>(false, false, cin, hw, rows, o.in(1).value.data(), gt.data(),
                            o.in(0).grad_data() + b * cin * hw, true);
          }
          if (o.input_needs_grad(1)) {
            detail::gemm<T>(false, true, cin, rows, hw, o.in(0).value.data() + b * cin * hw, gt.data(),
                            o.in(1).grad_data(), true);
          }
          if (has_bias && o.input_needs_grad(2)) {
            T* gbias = o.in(2).grad_data();
            for (Index co = 0; co < cout; ++co) {
              T s = 0;
              for (Index i = 0; i < ho * wo; ++i) s += gb[co * ho * wo + i];
              gbias[co] += s;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, Index k = 2) {
  if (x.ndim() != 4) throw DimensionError("max_pool2d expects NCHW input");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h / k, wo = w / k;
  if (ho < 1 || wo < 1) throw DimensionError("max_pool2d window larger than input");
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c * ho * wo));
  std::vector<T> out(arg->size());
  const T* xv = x.raw();
  for (Index p = 0; p < n * c; ++p)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        Index best = (p * h + i * k) * w + j * k;
        for (Index a = 0; a < k; ++a)
          for (Index b = 0; b < k; ++b) {
            const Index idx = (p * h + i * k + a) * w + j * k + b;
            if (xv[idx] > xv[best]) best = idx;
          }
        const Index o = (p * ho + i) * wo + j;
        (*arg)[o] = best;
        out[o] = xv[best];
      }
  return gather(x, {n, c, ho, wo}, arg, "max_pool2d");
}

// Half-pixel (align_corners=false) bilinear upsampling by an integer factor.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, Index factor) {
  if (x.ndim() != 4) throw DimensionError("bilinear_upsample expects NCHW input");
  if (factor < 2) throw DimensionError("bilinear_upsample factor must be >= 2");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h * factor, wo = w * factor;
  struct Tap {
    Index i0, i1;
    T w0, w1;
  };
  auto taps = [factor](Index in, Index out_n) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    for (Index o = 0; o < out_n; ++o) {
      T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
      if (src < 0) src = 0;
      Index i0 = static_cast<Index>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const Index i1 = std::min(i0 + 1, in - 1);
      const T l = src - static_cast<T>(i0);
      t[o] = {i0, i1, T(1) - l, l};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, ho));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, wo));
  std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
  const T* xv = x.raw();
  for (Index p = 0; p < n * c; ++p) {
    const T* src = xv + p * h * w;
    T* dst = out.data() + p * ho * wo;
    for (Index i = 0; i < ho; ++i) {
      const Tap& a = (*ty)[i];
      for (Index j = 0; j < wo; ++j) {
        const Tap& b = (*tx)[j];
        dst[i * wo + j] = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                          a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
      }
    }
  }
  return make_result<T>("bilinear_upsample", {n, c, ho, wo}, std::move(out), {x},
                        [=](Node<T>& o) {
                          T* gx = o.in(0).grad_data();
                          const T* g = o.grad.data();
                          for (Index p = 0; p < n * c; ++p) {
                            T* dst = gx + p * h * w;
                            const T* src = g + p * ho * wo;
                            for (Index i = 0; i < ho; ++i) {
                              const Tap& a = (*ty)[i];
                              for (Index j = 0; j < wo; ++j) {
                                const Tap& b = (*tx)[j];
                                const T v = src[i * wo + j];
                                dst[a.i0 * w + b.i0] += v * a.w0 * b.w0;
                                dst[a.i0 * w + b.i1] += v * a.w0 * b.w1;
                                dst[a.i1 * w + b.i0] += v * a.w1 * b.w0;
                                dst[a.i1 * w + b.i1] += v * a.w1 * b.w1;
                              }
                            }
                          }
                        });
}

// -----------------------------------------------------------------------------
// Softmax and normalization

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(axis, x.ndim());
  const auto [outer, len, inner] = detail::split_axis(x.shape(), axis);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xv = x.raw();
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      T s = 0;
      for (Index l = 0; l < len; ++l) {
        const T e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (Index l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  return make_result<T>("softmax", x.shape(), std::move(out), {x},
                        [outer = outer, len = len, inner = inner](Node<T>& o) {
                          T* gx = o.in(0).grad_data();
                          const T* g = o.grad.data();
                          const T* y = o.value.data();
                          for (Index a = 0; a < outer; ++a)
                            for (Index i = 0; i < inner; ++i) {
                              const Index base = a * len * inner + i;
                              T dot = 0;
                              for (Index l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
                              for (Index l = 0; l < len; ++l) {
                                const Index j = base + l * inner;
                                gx[j] += y[j] * (g[j] - dot);
                              }
                            }
                        });
}

enum class NormMode { Batch, Layer, Instance };

// Zero-mean unit-variance normalization over the mode's reduction axes, then
// a per-feature affine map. Batch/Instance expect x[N,C,...] with gain[C];
// Layer normalizes the last axis with gain[last].
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, NormMode mode, const Tensor<T>& gain, const Tensor<T>& offset,
                    T epsilon) {
  if (!(epsilon > 0)) throw ValidationError("normalize epsilon must be positive");
  Index groups = 0, group_size = 0;
  // element e belongs to group gi(e), uses parameter pi(e)
  Index n = 0, c = 0, s = 0, f = 0;
  if (mode == NormMode::Layer) {
    f = x.dim(-1);
    groups = x.numel() / f;
    group_size = f;
    if (gain.numel() != f || offset.numel() != f) throw DimensionError("layer norm affine extent mismatch");
  } else {
    if (x.ndim() < 2) throw DimensionError("batch/instance norm needs x[N,C,...]");
    n = x.dim(0);
    c = x.dim(1);
    s = x.numel() / (n * c);
    if (gain.numel() != c || offset.numel() != c) throw DimensionError("norm affine extent mismatch");
    groups = mode == NormMode::Batch ? c : n * c;
    group_size = mode == NormMode::Batch ? n * s : s;
  }
  // Enumerates the flat element indices of one group.
  auto for_group = [=](Index gi, auto&& fn) {
    if (mode == NormMode::Layer) {
      for (Index j = 0; j < f; ++j) fn(gi * f + j, j);
    } else if (mode == NormMode::Instance) {
      const Index ch = gi % c;
      for (Index j = 0; j < s; ++j) fn(gi * s + j, ch);
    } else {
      for (Index b = 0; b < n; ++b)
        for (Index j = 0; j < s; ++j) fn((b * c + gi) * s + j, gi);
    }
  };
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xv = x.raw();
  const T* gv = gain.raw();
  const T* ov = offset.raw();
  for (Index gi = 0; gi < groups; ++gi) {
    double mu = 0;
    for_group(gi, [&](Index e, Index) { mu += xv[e]; });
    mu /= static_cast<double>(group_size);
    double var = 0;
    for_group(gi, [&](Index e, Index) {
      const double d = xv[e] - mu;
      var += d * d;
    });
    var /= static_cast<double>(group_size);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
    (*inv_std)[gi] = is;
    for_group(gi, [&](Index e, Index p) {
      const T xh = static_cast<T>(xv[e] - mu) * is;
      (*xhat)[e] = xh;
      out[e] = gv[p] * xh + ov[p];
    });
  }
  return make_result<T>(
      "normalize", x.shape(), std::move(out), {x, gain, offset},
      [=](Node<T>& o) {
        const T* g = o.grad.data();
        const T* gv = o.in(1).value.data();
        if (o.input_needs_grad(1) || o.input_needs_grad(2)) {
          T* gg = o.input_needs_grad(1) ? o.in(1).grad_data() : nullptr;
          T* go = o.input_needs_grad(2) ? o.in(2).grad_data() : nullptr;
          for (Index gi = 0; gi < groups; ++gi)
            for_group(gi, [&](Index e, Index p) {
              if (gg) gg[p] += g[e] * (*xhat)[e];
              if (go) go[p] += g[e];
            });
        }
        if (o.input_needs_grad(0)) {
          T* gx = o.in(0).grad_data();
          const T inv_m = T(1) / static_cast<T>(group_size);
          for (Index gi = 0; gi < groups; ++gi) {
            T mean_d = 0, mean_dx = 0;
            for_group(gi, [&](Index e, Index p) {
              const T d = g[e] * gv[p];
              mean_d += d;
              mean_dx += d * (*xhat)[e];
            });
            mean_d *= inv_m;
            mean_dx *= inv_m;
            const T is = (*inv_std)[gi];
            for_group(gi, [&](Index e, Index p) {
              gx[e] += is * (g[e] * gv[p] - mean_d - (*xhat)[e] * mean_dx);
            });
          }
        }
      });
}

// Per-channel affine with fixed statistics, x[N,C,...]: gain*(x-mean)/sqrt(var+eps)+offset.
template <typename T>
Tensor<T> normalize_frozen(const Tensor<T>& x, const std::vector<T>& running_mean,
                           const std::vector<T>& running_var, const Tensor<T>& gain, const Tensor<T>& offset,
                           T epsilon) {
  const Index c = x.dim(1);
  std::vector<T> inv(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
  for (Index i = 0; i < c; ++i) {
    inv[i] = T(1) / std::sqrt(running_var[i] + epsilon);
    shift[i] = -running_mean[i] * inv[i];
  }
  Shape bshape(static_cast<std::size_t>(x.ndim()), 1);
  bshape[1] = c;
  auto inv_t = Tensor<T>::from(bshape, inv);
  auto shift_t = Tensor<T>::from(bshape, shift);
  auto xhat = add(mul(x, inv_t), shift_t);
  return add(mul(xhat, reshape(gain, bshape)), reshape(offset, bshape));
}

}  // namespace oarseg
