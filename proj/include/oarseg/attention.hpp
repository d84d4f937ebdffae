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

// Attention kernels on [B, heads, T, d] tensors: exact softmax attention,
// FAVOR+ positive random-feature attention, and (shifted) window attention
// on [B, H, W, C] maps.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oarseg/ops.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {

enum class AttentionVariant { Exact, Performer, Window };

struct AttentionConfig {
  Index embed_dim = 0;
  Index heads = 1;
  AttentionVariant variant = AttentionVariant::Exact;
  std::optional<Index> window;
  std::optional<Index> shift;
  std::optional<Index> random_features;
  std::uint64_t seed = 0;

  void validate() const {
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
      throw ValidationError("attention embed_dim " + std::to_string(embed_dim) +
                            " is not divisible by heads " + std::to_string(heads));
    }
    if ((variant == AttentionVariant::Window) != window.has_value()) {
      throw ValidationError("window is required exactly for the window variant");
    }
    if (window && *window < 1) throw ValidationError("window must be >= 1");
    if (shift && (*shift < 0 || (window && *shift >= *window))) throw ValidationError("shift must be in [0, window)");
    if ((variant == AttentionVariant::Performer) != (random_features.has_value() && *random_features >= 1)) {
      throw ValidationError("random_features >= 1 is required exactly for the performer variant");
    }
  }
};

// Conventional head count: embed_dim / 32, at least 1.
inline Index default_heads(Index embed_dim) { return std::max<Index>(1, embed_dim / 32); }

namespace detail {

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.ndim() != 4 || k.ndim() != 4 || v.ndim() != 4) throw DimensionError("attention expects [B,heads,T,d]");
  if (q.shape() != k.shape() || k.shape() != v.shape()) {
    throw DimensionError("attention q/k/v shapes differ: " + to_string(q.shape()) + ", " + to_string(k.shape()) +
                         ", " + to_string(v.shape()));
  }
}

}  // namespace detail

// softmax(q k^T / sqrt(d)) v. An optional additive mask [nW, T, T] is
// broadcast over windows when B = batch * nW.
template <typename T>
Tensor<T> attention_exact(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          const std::optional<Tensor<T>>& mask = std::nullopt) {
  if (!mask) detail::check_qkv(q, k, v);
  const Index d = q.dim(3);
  auto scores = scale(matmul(q, k, Transpose::No, Transpose::Yes), T(1) / std::sqrt(static_cast<T>(d)));
  if (mask) {
    const Index nw = mask->dim(0), t = q.dim(2), b = q.dim(0);
    if (b % nw != 0) throw DimensionError("attention mask windows do not divide the batch");
    auto s5 = reshape(scores, {b / nw, nw, q.dim(1), t, t});
    s5 = add(s5, reshape(*mask, {1, nw, 1, t, t}));
    scores = reshape(s5, {b, q.dim(1), t, t});
  }
  return matmul(softmax(scores, -1), v);
}

// m x d matrix of orthogonal random features: rows come in blocks of d that
// are orthonormal (QR of a Gaussian matrix), each rescaled by the norm of an
// independent Gaussian d-vector so marginals match i.i.d. N(0, I) rows.
template <typename T>
Tensor<T> orthogonal_features(Index m, Index d, Rng& rng) {
  std::vector<T> w(static_cast<std::size_t>(m * d));
  Index row = 0;
  while (row < m) {
    Eigen::MatrixXd g(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd qm = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
    for (Index i = 0; i < d && row < m; ++i, ++row) {
      double norm2 = 0;
      for (Index j = 0; j < d; ++j) {
        const double z = rng.normal();
        norm2 += z * z;
      }
      const double s = std::sqrt(norm2);
      for (Index j = 0; j < d; ++j) w[row * d + j] = static_cast<T>(qm(j, i) * s);
    }
  }
  return Tensor<T>::from({m, d}, std::move(w));
}

template <typename T>
Tensor<T> orthogonal_features(Index m, Index d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "performer.features"));
  return orthogonal_features<T>(m, d, rng);
}

namespace detail {

// phi(x) = exp(w.x - |x|^2/2 - stab) / sqrt(m) for x already scaled by d^-1/4.
// The stabilizer is a detached constant: per-row max for queries, a global
// max for keys. Both cancel in the normalized output.
template <typename T>
Tensor<T> favor_features(const Tensor<T>& x, const Tensor<T>& features, bool is_query) {
  const Index m = features.dim(0);
  auto proj = matmul(x, features, Transpose::No, Transpose::Yes);  // [B,h,T,m]
  auto half_sq = scale(sum(square(x), -1, true), T(0.5));          // [B,h,T,1]
  auto logits = sub(proj, half_sq);
  const Shape& s = logits.shape();
  const Index rows = logits.numel() / m;
  const T* lv = logits.raw();
  Tensor<T> stab;
  if (is_query) {
    std::vector<T> mx(static_cast<std::size_t>(rows));
    for (Index r = 0; r < rows; ++r) mx[r] = *std::max_element(lv + r * m, lv + (r + 1) * m);
    Shape ms = s;
    ms.back() = 1;
    stab = Tensor<T>::from(ms, std::move(mx));
  } else {
    stab = Tensor<T>::scalar(*std::max_element(lv, lv + logits.numel()));
  }
  return scale(exp(sub(logits, stab)), T(1) / std::sqrt(static_cast<T>(m)));
}

}  // namespace detail

// FAVOR+ estimate D^-1 phi(q')(phi(k')^T v) with q' = q / d^(1/4), k' likewise.
// Cost is O(T m d); no T x T matrix is formed. For a single key the softmax
// weight is exactly 1 and v is returned unchanged.
template <typename T>
Tensor<T> attention_performer(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& features) {
  detail::check_qkv(q, k, v);
  const Index d = q.dim(3);
  if (features.ndim() != 2 || features.dim(1) != d) throw DimensionError("performer features must be [m, d]");
  if (k.dim(2) == 1) return identity(v);
  const T s = T(1) / std::sqrt(std::sqrt(static_cast<T>(d)));
  auto phi_q = detail::favor_features(scale(q, s), features, true);
  auto phi_k = detail::favor_features(scale(k, s), features, false);
  auto kv = matmul(phi_k, v, Transpose::Yes, Transpose::No);  // [B,h,m,d]
  auto num = matmul(phi_q, kv);                               // [B,h,T,d]
  auto ksum = sum(phi_k, -2, true);                           // [B,h,1,m]
  auto den = matmul(phi_q, ksum, Transpose::No, Transpose::Yes);  // [B,h,T,1]
  for (T x : den.data()) {
    if (!(x > T(0)) || !std::isfinite(x)) {
      throw NumericError("attention_performer", current_scope(), "random-feature normalizer underflowed");
    }
  }
  return div(num, den);
}

template <typename T>
Tensor<T> attention_performer(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Index random_features,
                              std::uint64_t seed) {
  if (random_features < 1) throw ValidationError("random_features must be >= 1");
  return attention_performer(q, k, v, orthogonal_features<T>(random_features, q.dim(3), seed));
}

// -----------------------------------------------------------------------------
// Window attention

struct WindowPlan {
  Index b, h, w, c, heads, win, shift, hp, wp, nwh, nww;
  Index nw() const { return nwh * nww; }
  Index tokens() const { return win * win; }
  Index head_dim() const { return c / heads; }
};

inline WindowPlan window_plan(const Shape& s, Index heads, Index window, Index shift) {
  if (s.size() != 4) throw DimensionError("window attention expects [B,H,W,C]");
  if (window < 1) throw DimensionError("window must be >= 1");
  if (window > s[1] || window > s[2]) {
    throw DimensionError("window " + std::to_string(window) + " larger than feature map " + to_string(s));
  }
  if (shift < 0 || shift >= window) throw DimensionError("shift must lie in [0, window)");
  if (s[3] % heads != 0) throw DimensionError("channels not divisible by heads");
  WindowPlan p{s[0], s[1], s[2], s[3], heads, window, shift, 0, 0, 0, 0};
  p.hp = (p.h + window - 1) / window * window;
  p.wp = (p.w + window - 1) / window * window;
  p.nwh = p.hp / window;
  p.nww = p.wp / window;
  return p;
}

// Index map [B,H,W,C] -> [B*nW, heads, T, d] that zero-pads to a multiple of
// the window, rolls by -shift and partitions. Padded slots map to -1.
inline std::shared_ptr<std::vector<Index>> window_partition_index(const WindowPlan& p) {
  const Index d = p.head_dim(), t = p.tokens();
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(p.b * p.nw() * p.heads * t * d));
  Index o = 0;
  for (Index b = 0; b < p.b; ++b)
    for (Index wi = 0; wi < p.nwh; ++wi)
      for (Index wj = 0; wj < p.nww; ++wj)
        for (Index hd = 0; hd < p.heads; ++hd)
          for (Index ti = 0; ti < p.win; ++ti)
            for (Index tj = 0; tj < p.win; ++tj) {
              const Index sy = (wi * p.win + ti + p.shift) % p.hp;
              const Index sx = (wj * p.win + tj + p.shift) % p.wp;
              const bool inside = sy < p.h && sx < p.w;
              const Index base = ((b * p.h + sy) * p.w + sx) * p.c + hd * d;
              for (Index e = 0; e < d; ++e) (*idx)[o++] = inside ? base + e : -1;
            }
  return idx;
}

// Inverse of window_partition_index restricted to real (unpadded) pixels.
inline std::shared_ptr<std::vector<Index>> window_merge_index(const WindowPlan& p) {
  const Index d = p.head_dim(), t = p.tokens();
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(p.b * p.h * p.w * p.c));
  Index o = 0;
  for (Index b = 0; b < p.b; ++b)
    for (Index y = 0; y < p.h; ++y)
      for (Index x = 0; x < p.w; ++x) {
        const Index ry = ((y - p.shift) % p.hp + p.hp) % p.hp;
        const Index rx = ((x - p.shift) % p.wp + p.wp) % p.wp;
        const Index win = b * p.nw() + (ry / p.win) * p.nww + rx / p.win;
        const Index tok = (ry % p.win) * p.win + rx % p.win;
        for (Index c = 0; c < p.c; ++c) {
          const Index hd = c / d, e = c % d;
          (*idx)[o++] = ((win * p.heads + hd) * t + tok) * d + e;
        }
      }
  return idx;
}

// Additive mask [nW, T, T]: blocks pairs from different pre-shift regions and
// keys that lie in the zero padding. Empty optional when nothing is masked.
template <typename T>
std::optional<Tensor<T>> window_mask(const WindowPlan& p) {
  const bool padded = p.hp != p.h || p.wp != p.w;
  if (p.shift == 0 && !padded) return std::nullopt;
  auto region = [&](Index r, Index n) -> int {
    if (p.shift == 0) return 0;
    if (r < n - p.win) return 0;
    if (r < n - p.shift) return 1;
    return 2;
  };
  const Index t = p.tokens();
  constexpr T kBlocked = T(-1e9);
  std::vector<T> m(static_cast<std::size_t>(p.nw() * t * t), T(0));
  for (Index wi = 0; wi < p.nwh; ++wi)
    for (Index wj = 0; wj < p.nww; ++wj) {
      std::vector<int> label(static_cast<std::size_t>(t));
      std::vector<bool> real(static_cast<std::size_t>(t));
      for (Index ti = 0; ti < p.win; ++ti)
        for (Index tj = 0; tj < p.win; ++tj) {
          const Index ry = wi * p.win + ti, rx = wj * p.win + tj;
          label[ti * p.win + tj] = region(ry, p.hp) * 3 + region(rx, p.wp);
          real[ti * p.win + tj] = (ry + p.shift) % p.hp < p.h && (rx + p.shift) % p.wp < p.w;
        }
      T* mw = m.data() + (wi * p.nww + wj) * t * t;
      for (Index a = 0; a < t; ++a)
        for (Index bt = 0; bt < t; ++bt)
          if (label[a] != label[bt] || !real[bt]) mw[a * t + bt] = kBlocked;
    }
  return Tensor<T>::from({p.nw(), t, t}, std::move(m));
}

// Exact attention restricted to window x window tiles of [B,H,W,C] maps, with
// an optional cyclic shift of the tiling and Swin-style masking.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Index heads, Index window,
                           Index shift) {
  if (q.shape() != k.shape() || k.shape() != v.shape()) throw DimensionError("window attention q/k/v shapes differ");
  const WindowPlan p = window_plan(q.shape(), heads, window, shift);
  const auto part = window_partition_index(p);
  const Shape ws{p.b * p.nw(), p.heads, p.tokens(), p.head_dim()};
  auto qw = gather(q, ws, part, "window_partition");
  auto kw = gather(k, ws, part, "window_partition");
  auto vw = gather(v, ws, part, "window_partition");
  auto out = attention_exact(qw, kw, vw, window_mask<T>(p));
  return gather(out, q.shape(), window_merge_index(p), "window_merge");
}

// Parameter-free form: q = k = v = x.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const AttentionConfig& cfg) {
  cfg.validate();
  if (cfg.variant != AttentionVariant::Window) throw ValidationError("window_attention needs the window variant");
  return window_attention(x, x, x, cfg.heads, *cfg.window, cfg.shift.value_or(0));
}

}  // namespace oarseg
