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

// Parameterized building blocks. A Module owns named parameters and child
// modules; enumeration is depth-first in registration order (own parameters
// first), which fixes checkpoint layout.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oarseg/attention.hpp"
#include "oarseg/ops.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {

enum class ParamKind { Weight, Bias, Norm, Embedding };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& name() const { return name_; }
  bool training() const { return training_; }
  void set_training(bool on) {
    training_ = on;
    for (auto& c : children_) c->set_training(on);
  }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    for (const auto& p : params_) out.push_back({prefix + p.name, p.tensor, p.kind});
    for (const auto& c : children_) c->collect_parameters(prefix + c->name_ + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) const {
    for (const auto& b : buffers_) out.push_back({prefix + b.name, b.tensor});
    for (const auto& c : children_) c->collect_buffers(prefix + c->name_ + ".", out);
  }
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    collect_parameters("", out);
    return out;
  }
  std::vector<NamedBuffer<T>> buffers() const {
    std::vector<NamedBuffer<T>> out;
    collect_buffers("", out);
    return out;
  }
  Index num_parameters() const {
    Index n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

 protected:
  Tensor<T> param(std::string name, Tensor<T> t, ParamKind kind) {
    t.set_requires_grad(true);
    params_.push_back({std::move(name), t, kind});
    return t;
  }
  Tensor<T> buffer(std::string name, Tensor<T> t) {
    buffers_.push_back({std::move(name), t});
    return t;
  }
  template <class M, class... Args>
  std::shared_ptr<M> child(std::string name, Args&&... args) {
    auto m = std::make_shared<M>(std::forward<Args>(args)...);
    m->name_ = std::move(name);
    children_.push_back(m);
    return m;
  }

 private:
  std::string name_;
  bool training_ = true;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  std::vector<std::shared_ptr<Module>> children_;
};

// U(-b, b) with b = sqrt(3 / fan_in): unit-variance propagation for linear maps.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, Index fan_in, Rng& rng) {
  const double b = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-b, b));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x) { return permute(x, {0, 2, 3, 1}); }
template <typename T>
Tensor<T> nhwc_to_nchw(const Tensor<T>& x) { return permute(x, {0, 3, 1, 2}); }

// -----------------------------------------------------------------------------

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(Index cin, Index cout, Index kernel, Rng& rng, bool bias = true, Conv2dOptions opt = {})
      : opt_(opt) {
    if (cin < 1 || cout < 1) throw ValidationError("conv channels must be positive");
    weight = this->param("weight", uniform_fan_in<T>({cout, cin, kernel, kernel}, cin * kernel * kernel, rng),
                         ParamKind::Weight);
    if (bias) this->bias = this->param("bias", Tensor<T>::zeros({cout}), ParamKind::Bias);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return conv2d(x, weight, bias, opt_);
  }

  Tensor<T> weight;
  std::optional<Tensor<T>> bias;

 private:
  Conv2dOptions opt_;
};

template <typename T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d(Index cin, Index cout, Index kernel, Rng& rng) {
    weight = this->param("weight", uniform_fan_in<T>({cin, cout, kernel, kernel}, cin, rng), ParamKind::Weight);
    bias = this->param("bias", Tensor<T>::zeros({cout}), ParamKind::Bias);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return conv_transpose2d(x, weight, std::optional<Tensor<T>>(bias));
  }
  Tensor<T> weight, bias;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(Index in, Index out, Rng& rng, bool bias = true) {
    weight = this->param("weight", uniform_fan_in<T>({out, in}, in, rng), ParamKind::Weight);
    if (bias) this->bias = this->param("bias", Tensor<T>::zeros({out}), ParamKind::Bias);
  }
  // x[..., in] -> [..., out]
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    auto y = matmul(x, weight, Transpose::No, Transpose::Yes);
    return bias ? add(y, *bias) : y;
  }
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(Index channels, T momentum = T(0.1), T eps = T(1e-5)) : momentum_(momentum), eps_(eps) {
    gain = this->param("gain", Tensor<T>::full({channels}, T(1)), ParamKind::Norm);
    offset = this->param("offset", Tensor<T>::zeros({channels}), ParamKind::Norm);
    running_mean = this->buffer("running_mean", Tensor<T>::zeros({channels}));
    running_var = this->buffer("running_var", Tensor<T>::full({channels}, T(1)));
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    const Index c = x.dim(1);
    std::vector<T> rm(running_mean.data().begin(), running_mean.data().end());
    std::vector<T> rv(running_var.data().begin(), running_var.data().end());
    if (!this->training()) return normalize_frozen(x, rm, rv, gain, offset, eps_);
    // Update running statistics from the batch before normalizing.
    const Index n = x.dim(0), s = x.numel() / (n * c), count = n * s;
    const T* xv = x.raw();
    auto mean_buf = running_mean;
    auto var_buf = running_var;
    for (Index ch = 0; ch < c; ++ch) {
      double mu = 0, sq = 0;
      for (Index b = 0; b < n; ++b)
        for (Index j = 0; j < s; ++j) mu += xv[(b * c + ch) * s + j];
      mu /= static_cast<double>(count);
      for (Index b = 0; b < n; ++b)
        for (Index j = 0; j < s; ++j) {
          const double d = xv[(b * c + ch) * s + j] - mu;
          sq += d * d;
        }
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : sq;
      mean_buf.raw()[ch] = static_cast<T>((1 - momentum_) * rm[ch] + momentum_ * mu);
      var_buf.raw()[ch] = static_cast<T>((1 - momentum_) * rv[ch] + momentum_ * unbiased);
    }
    return normalize(x, NormMode::Batch, gain, offset, eps_);
  }
  Tensor<T> gain, offset, running_mean, running_var;

 private:
  T momentum_, eps_;
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(Index features, T eps = T(1e-5)) : eps_(eps) {
    gain = this->param("gain", Tensor<T>::full({features}, T(1)), ParamKind::Norm);
    offset = this->param("offset", Tensor<T>::zeros({features}), ParamKind::Norm);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return normalize(x, NormMode::Layer, gain, offset, eps_);
  }
  Tensor<T> gain, offset;

 private:
  T eps_;
};

// conv(no bias) -> batch norm -> GeLU
template <typename T>
class ConvNormAct : public Module<T> {
 public:
  ConvNormAct(Index cin, Index cout, Index kernel, Rng& rng) {
    conv = this->template child<Conv2d<T>>("conv", cin, cout, kernel, rng, false);
    norm = this->template child<BatchNorm2d<T>>("norm", cout);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return gelu(norm->forward(conv->forward(x)));
  }
  std::shared_ptr<Conv2d<T>> conv;
  std::shared_ptr<BatchNorm2d<T>> norm;
};

// Two stacked conv-norm-GeLU layers (plain U-Net stage).
template <typename T>
class DoubleConv : public Module<T> {
 public:
  DoubleConv(Index cin, Index cout, Rng& rng, Index mid = 0) {
    if (mid == 0) mid = cout;
    first = this->template child<ConvNormAct<T>>("conv0", cin, mid, 3, rng);
    second = this->template child<ConvNormAct<T>>("conv1", mid, cout, 3, rng);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return second->forward(first->forward(x));
  }
  std::shared_ptr<ConvNormAct<T>> first, second;
};

struct BlockConfig {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 3;
  bool residual = true;

  void validate() const {
    if (in_channels < 1 || out_channels < 1) throw ValidationError("block channels must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ValidationError("block kernel must be odd");
  }
};

// conv -> norm -> GeLU -> conv -> norm, plus shortcut (1x1 conv + norm when
// channel counts differ), then GeLU.
template <typename T>
class ResidualBlock : public Module<T> {
 public:
  ResidualBlock(const BlockConfig& cfg, Rng& rng) : residual_(cfg.residual) {
    cfg.validate();
    conv1 = this->template child<Conv2d<T>>("conv1", cfg.in_channels, cfg.out_channels, cfg.kernel, rng, false);
    norm1 = this->template child<BatchNorm2d<T>>("norm1", cfg.out_channels);
    conv2 = this->template child<Conv2d<T>>("conv2", cfg.out_channels, cfg.out_channels, cfg.kernel, rng, false);
    norm2 = this->template child<BatchNorm2d<T>>("norm2", cfg.out_channels);
    if (residual_ && cfg.in_channels != cfg.out_channels) {
      shortcut = this->template child<Conv2d<T>>("shortcut", cfg.in_channels, cfg.out_channels, 1, rng, false);
      shortcut_norm = this->template child<BatchNorm2d<T>>("shortcut_norm", cfg.out_channels);
    }
  }
  ResidualBlock(Index cin, Index cout, Rng& rng) : ResidualBlock(BlockConfig{cin, cout, 3, true}, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    auto y = norm2->forward(conv2->forward(gelu(norm1->forward(conv1->forward(x)))));
    if (residual_) y = add(y, shortcut ? shortcut_norm->forward(shortcut->forward(x)) : x);
    return gelu(y);
  }
  std::shared_ptr<Conv2d<T>> conv1, conv2, shortcut;
  std::shared_ptr<BatchNorm2d<T>> norm1, norm2, shortcut_norm;

 private:
  bool residual_;
};

// Four parallel dilated 3x3 convolutions (rates 1..4) fused by a 1x1 conv.
template <typename T>
class ASPP : public Module<T> {
 public:
  ASPP(Index cin, Index branch_channels, Rng& rng) {
    for (Index r = 1; r <= 4; ++r) {
      branches.push_back(this->template child<Conv2d<T>>("branch" + std::to_string(r), cin, branch_channels, 3, rng,
                                                         true, Conv2dOptions{1, r, Padding::Same}));
    }
    fuse = this->template child<Conv2d<T>>("fuse", 4 * branch_channels, branch_channels, 1, rng, true);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    std::vector<Tensor<T>> outs;
    for (const auto& b : branches) outs.push_back(b->forward(x));
    return fuse->forward(concat(outs, 1));
  }
  std::vector<std::shared_ptr<Conv2d<T>>> branches;
  std::shared_ptr<Conv2d<T>> fuse;
};

// Squeeze-and-excitation: pooled channel descriptor -> C/r -> GeLU -> C -> sigmoid gate.
template <typename T>
class SEBlock : public Module<T> {
 public:
  SEBlock(Index channels, Index reduction, Rng& rng) {
    if (reduction < 1 || channels % reduction != 0) {
      throw ValidationError("SE channels " + std::to_string(channels) + " not divisible by reduction " +
                            std::to_string(reduction));
    }
    squeeze = this->template child<Linear<T>>("squeeze", channels, channels / reduction, rng);
    excite = this->template child<Linear<T>>("excite", channels / reduction, channels, rng);
  }
  Tensor<T> gates(const Tensor<T>& x) const {
    const Index n = x.dim(0), c = x.dim(1);
    auto pooled = mean(reshape(x, {n, c, -1}), 2);  // [N, C]
    return sigmoid(excite->forward(gelu(squeeze->forward(pooled))));
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    const Index n = x.dim(0), c = x.dim(1);
    return mul(x, reshape(gates(x), {n, c, 1, 1}));
  }
  std::shared_ptr<Linear<T>> squeeze, excite;
};

// Non-overlapping patch flattening + linear map + learned position embedding.
// x[B,C,H,W] -> [B, (H/p)(W/p), dim]. The embedding is stored for a reference
// token grid; other grids read it by nearest-neighbour lookup.
template <typename T>
class PatchEmbed : public Module<T> {
 public:
  PatchEmbed(Index cin, Index patch, Index dim, Index grid_h, Index grid_w, Rng& rng)
      : cin_(cin), patch_(patch), grid_h_(grid_h), grid_w_(grid_w) {
    if (patch < 1 || grid_h < 1 || grid_w < 1) throw ValidationError("patch embed needs positive patch and grid");
    proj = this->template child<Linear<T>>("proj", cin * patch * patch, dim, rng);
    pos = this->param("pos", normal_init<T>({1, grid_h * grid_w, dim}, 0.02, rng), ParamKind::Embedding);
  }
  Index patch() const { return patch_; }

  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    if (x.ndim() != 4 || x.dim(1) != cin_) throw DimensionError("patch embed input must be [B," + std::to_string(cin_) + ",H,W]");
    const Index b = x.dim(0), h = x.dim(2), w = x.dim(3), p = patch_;
    if (h % p != 0 || w % p != 0) {
      throw DimensionError("extent " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                           std::to_string(p));
    }
    const Index gh = h / p, gw = w / p, f = cin_ * p * p;
    auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
    Index o = 0;
    for (Index bi = 0; bi < b; ++bi)
      for (Index i = 0; i < gh; ++i)
        for (Index j = 0; j < gw; ++j)
          for (Index c = 0; c < cin_; ++c)
            for (Index a = 0; a < p; ++a)
              for (Index e = 0; e < p; ++e) (*idx)[o++] = ((bi * cin_ + c) * h + i * p + a) * w + j * p + e;
    auto tokens = proj->forward(gather(x, {b, gh * gw, f}, idx, "patchify"));
    return add(tokens, position_embedding(gh, gw));
  }

  Tensor<T> position_embedding(Index gh, Index gw) const {
    if (gh == grid_h_ && gw == grid_w_) return pos;
    const Index dim = pos.dim(2);
    auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(gh * gw * dim));
    Index o = 0;
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j) {
        const Index si = std::min(grid_h_ - 1, i * grid_h_ / gh), sj = std::min(grid_w_ - 1, j * grid_w_ / gw);
        for (Index d = 0; d < dim; ++d) (*idx)[o++] = (si * grid_w_ + sj) * dim + d;
      }
    return gather(pos, {1, gh * gw, dim}, idx, "pos_lookup");
  }

  std::shared_ptr<Linear<T>> proj;
  Tensor<T> pos;

 private:
  Index cin_, patch_, grid_h_, grid_w_;
};

// Multi-head attention over token sequences [B,T,D] (exact or performer), or
// over token maps [B,H,W,D] (window).
template <typename T>
class MultiHeadAttention : public Module<T> {
 public:
  MultiHeadAttention(const AttentionConfig& cfg, Rng& rng)
      : cfg_(cfg), feature_rng_(derive_seed(cfg.seed, "performer.redraw")) {
    cfg_.validate();
    qkv = this->template child<Linear<T>>("qkv", cfg.embed_dim, 3 * cfg.embed_dim, rng);
    out = this->template child<Linear<T>>("out", cfg.embed_dim, cfg.embed_dim, rng);
    if (cfg_.variant == AttentionVariant::Performer) {
      frozen_ = orthogonal_features<T>(*cfg_.random_features, cfg_.embed_dim / cfg_.heads, cfg_.seed);
    }
  }
  const AttentionConfig& config() const { return cfg_; }

  // tokens [B,T,D]
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    const Index b = x.dim(0), t = x.dim(1), d = cfg_.embed_dim, h = cfg_.heads, dh = d / h;
    auto packed = permute(reshape(qkv->forward(x), {b, t, 3, h, dh}), {2, 0, 3, 1, 4});  // [3,B,h,T,dh]
    auto part = [&](Index i) { return reshape(crop(packed, {i, 0, 0, 0, 0}, {1, b, h, t, dh}), {b, h, t, dh}); };
    auto q = part(0), k = part(1), v = part(2);
    Tensor<T> a;
    if (cfg_.variant == AttentionVariant::Performer) {
      a = attention_performer(q, k, v, features());
    } else {
      a = attention_exact(q, k, v);
    }
    return out->forward(reshape(permute(a, {0, 2, 1, 3}), {b, t, d}));
  }

  // maps [B,H,W,D]; window and shift already adapted to the map extent
  Tensor<T> forward_windows(const Tensor<T>& x, Index window, Index shift) const {
    ScopeGuard g(this->name());
    const Index b = x.dim(0), hh = x.dim(1), ww = x.dim(2), d = cfg_.embed_dim;
    auto packed = qkv->forward(x);  // [B,H,W,3D]
    auto part = [&](Index i) { return crop(packed, {0, 0, 0, i * d}, {b, hh, ww, d}); };
    return out->forward(window_attention(part(0), part(1), part(2), cfg_.heads, window, shift));
  }

  // Redrawn per call in training mode, fixed by seed in eval mode.
  Tensor<T> features() const {
    if (!this->training()) return frozen_;
    return orthogonal_features<T>(*cfg_.random_features, cfg_.embed_dim / cfg_.heads, feature_rng_);
  }

  std::shared_ptr<Linear<T>> qkv, out;

 private:
  AttentionConfig cfg_;
  Tensor<T> frozen_;
  mutable Rng feature_rng_;
};

template <typename T>
class FeedForward : public Module<T> {
 public:
  FeedForward(Index dim, Index expansion, Rng& rng) {
    fc1 = this->template child<Linear<T>>("fc1", dim, dim * expansion, rng);
    fc2 = this->template child<Linear<T>>("fc2", dim * expansion, dim, rng);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    return fc2->forward(gelu(fc1->forward(x)));
  }
  std::shared_ptr<Linear<T>> fc1, fc2;
};

// Pre-norm transformer block on [B,T,D]: x + attn(LN x), then x + FFN(LN x).
template <typename T>
class TransformerBlock : public Module<T> {
 public:
  TransformerBlock(const AttentionConfig& cfg, Rng& rng, Index expansion = 4) {
    norm1 = this->template child<LayerNorm<T>>("norm1", cfg.embed_dim);
    attn = this->template child<MultiHeadAttention<T>>("attn", cfg, rng);
    norm2 = this->template child<LayerNorm<T>>("norm2", cfg.embed_dim);
    ffn = this->template child<FeedForward<T>>("ffn", cfg.embed_dim, expansion, rng);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    auto y = add(x, attn->forward(norm1->forward(x)));
    return add(y, ffn->forward(norm2->forward(y)));
  }
  std::shared_ptr<LayerNorm<T>> norm1, norm2;
  std::shared_ptr<MultiHeadAttention<T>> attn;
  std::shared_ptr<FeedForward<T>> ffn;
};

// Pre-norm shifted-window block on maps [B,H,W,C]. Maps no larger than the
// window collapse to one global window without shift.
template <typename T>
class SwinBlock : public Module<T> {
 public:
  SwinBlock(Index dim, Index heads, Index window, Index shift, std::uint64_t seed, Rng& rng)
      : window_(window), shift_(shift) {
    AttentionConfig cfg{dim, heads, AttentionVariant::Window, window, shift, std::nullopt, seed};
    cfg.validate();
    norm1 = this->template child<LayerNorm<T>>("norm1", dim);
    attn = this->template child<MultiHeadAttention<T>>("attn", cfg, rng);
    norm2 = this->template child<LayerNorm<T>>("norm2", dim);
    ffn = this->template child<FeedForward<T>>("ffn", dim, 4, rng);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    const Index extent = std::min(x.dim(1), x.dim(2));
    const Index win = std::min(window_, extent);
    const Index shift = extent <= window_ ? 0 : shift_;
    auto y = add(x, attn->forward_windows(norm1->forward(x), win, shift));
    return add(y, ffn->forward(norm2->forward(y)));
  }
  std::shared_ptr<LayerNorm<T>> norm1, norm2;
  std::shared_ptr<MultiHeadAttention<T>> attn;
  std::shared_ptr<FeedForward<T>> ffn;

 private:
  Index window_, shift_;
};

// [B,H,W,C] -> [B,H/2,W/2,2C]: 2x2 neighbourhood concat, LN, linear 4C->2C.
template <typename T>
class PatchMerging : public Module<T> {
 public:
  PatchMerging(Index dim, Rng& rng) : dim_(dim) {
    norm = this->template child<LayerNorm<T>>("norm", 4 * dim);
    reduce = this->template child<Linear<T>>("reduce", 4 * dim, 2 * dim, rng, false);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const Index ho = (h + 1) / 2, wo = (w + 1) / 2;
    auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(b * ho * wo * 4 * c));
    const Index offs[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    Index o = 0;
    for (Index bi = 0; bi < b; ++bi)
      for (Index i = 0; i < ho; ++i)
        for (Index j = 0; j < wo; ++j)
          for (const auto& off : offs) {
            const Index y = 2 * i + off[0], xx = 2 * j + off[1];
            const bool inside = y < h && xx < w;
            for (Index ch = 0; ch < c; ++ch) (*idx)[o++] = inside ? ((bi * h + y) * w + xx) * c + ch : -1;
          }
    return reduce->forward(norm->forward(gather(x, {b, ho, wo, 4 * c}, idx, "patch_merge")));
  }
  std::shared_ptr<LayerNorm<T>> norm;
  std::shared_ptr<Linear<T>> reduce;

 private:
  Index dim_;
};

}  // namespace oarseg
