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

// The seven segmentation networks. Notation: w = width_base, L = levels,
// c(l) = w * 2^l is the channel count of encoder level l (l = 0 .. L-1).

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oarseg/nn.hpp"

namespace oarseg {

enum class Arch { UNet, CUNet, UNETR, SwinUNETR, MSUneTr, DeceptiConv, SwinConvNet };
enum class ScalePreset { Paper, Desk };

inline const std::vector<Arch>& all_archs() {
  static const std::vector<Arch> v{Arch::UNet,    Arch::CUNet,       Arch::UNETR,      Arch::SwinUNETR,
                                   Arch::MSUneTr, Arch::DeceptiConv, Arch::SwinConvNet};
  return v;
}

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::UNet: return "unet";
    case Arch::CUNet: return "cunet";
    case Arch::UNETR: return "unetr";
    case Arch::SwinUNETR: return "swin_unetr";
    case Arch::MSUneTr: return "msunetr";
    case Arch::DeceptiConv: return "decepticonv";
    case Arch::SwinConvNet: return "swinconvnet";
  }
  return "?";
}

inline Arch parse_arch(const std::string& s) {
  for (Arch a : all_archs())
    if (arch_name(a) == s) return a;
  throw ValidationError("unknown architecture '" + s + "'");
}

inline std::string preset_name(ScalePreset p) { return p == ScalePreset::Paper ? "paper" : "desk"; }

inline ScalePreset parse_preset(const std::string& s) {
  if (s == "paper") return ScalePreset::Paper;
  if (s == "desk") return ScalePreset::Desk;
  throw ValidationError("unknown scale preset '" + s + "'");
}

// Parameter totals reported for the paper-scale models (1 input channel, 5 classes).
inline Index paper_param_count(Arch a) {
  switch (a) {
    case Arch::UNet: return 10188773;
    case Arch::CUNet: return 14605301;
    case Arch::UNETR: return 87118837;
    case Arch::SwinUNETR: return 25122917;
    case Arch::MSUneTr: return 7979765;
    case Arch::DeceptiConv: return 27782549;
    case Arch::SwinConvNet: return 27106037;
  }
  return 0;
}

struct ModelSpec {
  Arch arch = Arch::UNet;
  Index in_channels = 1;
  Index num_classes = 5;
  Index width_base = 48;
  Index levels = 4;
  ScalePreset scale_preset = ScalePreset::Paper;
  // Reference input extent; sizes position embeddings of the token models.
  Index image_extent = 320;
  Index random_features = 256;
  Index window = 4;
  Index se_reduction = 8;
  // UNETR transformer encoder.
  Index vit_dim = 768;
  Index vit_layers = 12;
  Index vit_feature = 16;

  static ModelSpec preset(Arch arch, ScalePreset p) {
    ModelSpec s;
    s.arch = arch;
    s.scale_preset = p;
    if (p == ScalePreset::Desk) {
      s.width_base = 16;
      s.levels = 3;
      s.image_extent = 96;
      s.vit_dim = 96;
      s.vit_layers = 6;
      s.vit_feature = 16;
    }
    return s;
  }

  void validate() const {
    if (width_base < 8) throw ValidationError("width_base must be >= 8");
    if (levels < 2) throw ValidationError("levels must be >= 2");
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (in_channels < 1) throw ValidationError("in_channels must be >= 1");
    if (image_extent < 1) throw ValidationError("image_extent must be >= 1");
    if (random_features < 1 || window < 1 || se_reduction < 1) throw ValidationError("invalid block setting");
    if (arch == Arch::UNETR && (vit_dim < 1 || vit_layers < levels)) {
      throw ValidationError("UNETR needs at least one transformer layer per level");
    }
  }

  Index channels(Index level) const { return width_base << level; }
};

// Base class of every architecture: maps x[N,Cin,H,W] with H,W divisible by
// divisor() to logits [N,classes,H,W].
template <typename T>
class Network : public Module<T> {
 public:
  explicit Network(const ModelSpec& spec) : spec_(spec) {}
  virtual Tensor<T> logits(const Tensor<T>& x) const = 0;
  virtual Index divisor() const { return Index{1} << spec_.levels; }
  const ModelSpec& spec() const { return spec_; }

 protected:
  ModelSpec spec_;
};

namespace detail {

template <typename T>
Tensor<T> up2(const Tensor<T>& x) { return bilinear_upsample(x, 2); }

// Builds a tokens [B, gh*gw, C] -> map [B, C, gh, gw] conversion.
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, Index gh, Index gw) {
  const Index b = tokens.dim(0), c = tokens.dim(2);
  return permute(reshape(tokens, {b, gh, gw, c}), {0, 3, 1, 2});
}

}  // namespace detail

// Decoder shared by the convolutional family: at each level, bilinear x2,
// concat with the skip, then a block; outputs c(l-1) (c(0) at the top).
template <typename T, class Block>
class SkipDecoder : public Module<T> {
 public:
  SkipDecoder(const ModelSpec& s, Index bottom_channels, Rng& rng) {
    Index prev = bottom_channels;
    for (Index l = s.levels - 1; l >= 0; --l) {
      const Index out = l > 0 ? s.channels(l - 1) : s.channels(0);
      stages.push_back(this->template child<Block>("up" + std::to_string(l), prev + s.channels(l), out, rng));
      prev = out;
    }
    head = this->template child<Conv2d<T>>("head", prev, s.num_classes, 1, rng, true);
  }
  // skips ordered by level (0 = full resolution)
  Tensor<T> forward(Tensor<T> x, const std::vector<Tensor<T>>& skips) const {
    ScopeGuard g(this->name());
    const Index levels = static_cast<Index>(skips.size());
    for (Index i = 0; i < levels; ++i) {
      const Index l = levels - 1 - i;
      x = stages[i]->forward(concat<T>({detail::up2(x), skips[l]}, 1));
    }
    return head->forward(x);
  }
  std::vector<std::shared_ptr<Block>> stages;
  std::shared_ptr<Conv2d<T>> head;
};

// -----------------------------------------------------------------------------

template <typename T>
class UNet : public Network<T> {
 public:
  UNet(const ModelSpec& s, Rng& rng) : Network<T>(s) {
    Index cin = s.in_channels;
    for (Index l = 0; l < s.levels; ++l) {
      enc.push_back(this->template child<DoubleConv<T>>("enc" + std::to_string(l), cin, s.channels(l), rng));
      cin = s.channels(l);
    }
    const Index top = s.channels(s.levels - 1);
    bottleneck = this->template child<DoubleConv<T>>("bottleneck", top, top, rng, 2 * top);
    dec = this->template child<SkipDecoder<T, DoubleConv<T>>>("dec", s, top, rng);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (const auto& e : enc) {
      h = e->forward(h);
      skips.push_back(h);
      h = max_pool2d(h);
    }
    return dec->forward(bottleneck->forward(h), skips);
  }
  std::vector<std::shared_ptr<DoubleConv<T>>> enc;
  std::shared_ptr<DoubleConv<T>> bottleneck;
  std::shared_ptr<SkipDecoder<T, DoubleConv<T>>> dec;
};

template <typename T>
class CUNet : public Network<T> {
 public:
  CUNet(const ModelSpec& s, Rng& rng) : Network<T>(s) {
    Index cin = s.in_channels;
    for (Index l = 0; l < s.levels; ++l) {
      const Index c = s.channels(l);
      enc.push_back(this->template child<ResidualBlock<T>>("enc" + std::to_string(l), cin, c, rng));
      skip.push_back(this->template child<ResidualBlock<T>>("skip" + std::to_string(l), c, c, rng));
      cin = c;
    }
    aspp = this->template child<ASPP<T>>("aspp", cin, cin, rng);
    dec = this->template child<SkipDecoder<T, ResidualBlock<T>>>("dec", s, cin, rng);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < enc.size(); ++l) {
      h = enc[l]->forward(h);
      skips.push_back(skip[l]->forward(h));
      h = max_pool2d(h);
    }
    return dec->forward(aspp->forward(h), skips);
  }
  std::vector<std::shared_ptr<ResidualBlock<T>>> enc, skip;
  std::shared_ptr<ASPP<T>> aspp;
  std::shared_ptr<SkipDecoder<T, ResidualBlock<T>>> dec;
};

// Vision Performer layer: patch embedding (patch p) + one performer block,
// reshaped back to a [B, C, H/p, W/p] map.
template <typename T>
class VisionPerformer : public Module<T> {
 public:
  VisionPerformer(const ModelSpec& s, Index patch, Index dim, std::uint64_t seed, Rng& rng) : patch_(patch) {
    const Index grid = std::max<Index>(1, s.image_extent / patch);
    embed = this->template child<PatchEmbed<T>>("embed", s.in_channels, patch, dim, grid, grid, rng);
    AttentionConfig cfg{dim, default_heads(dim), AttentionVariant::Performer, std::nullopt, std::nullopt,
                        s.random_features, seed};
    block = this->template child<TransformerBlock<T>>("block", cfg, rng);
  }
  Tensor<T> forward(const Tensor<T>& image) const {
    ScopeGuard g(this->name());
    const Index gh = image.dim(2) / patch_, gw = image.dim(3) / patch_;
    return detail::tokens_to_map(block->forward(embed->forward(image)), gh, gw);
  }
  std::shared_ptr<PatchEmbed<T>> embed;
  std::shared_ptr<TransformerBlock<T>> block;

 private:
  Index patch_;
};

// Performer encoder straight from the image at patch sizes 2^n, n = 1..L;
// level n carries c(n-1) channels and feeds the decoder through a residual skip.
template <typename T>
class MSUneTr : public Network<T> {
 public:
  MSUneTr(const ModelSpec& s, Rng& rng, std::uint64_t seed) : Network<T>(s) {
    for (Index n = 1; n <= s.levels; ++n) {
      const Index c = s.channels(n - 1);
      enc.push_back(this->template child<VisionPerformer<T>>("enc" + std::to_string(n), s, Index{1} << n, c,
                                                             derive_seed(seed, static_cast<std::uint64_t>(n)), rng));
      skip.push_back(this->template child<ResidualBlock<T>>("skip" + std::to_string(n), c, c, rng));
    }
    Index prev = s.channels(s.levels - 1);
    for (Index n = s.levels - 1; n >= 1; --n) {
      const Index c = s.channels(n - 1);
      dec.push_back(this->template child<ResidualBlock<T>>("up" + std::to_string(n), prev + c, c, rng));
      prev = c;
    }
    head = this->template child<Conv2d<T>>("head", prev, s.num_classes, 1, rng, true);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    std::vector<Tensor<T>> feats;
    for (std::size_t i = 0; i < enc.size(); ++i) feats.push_back(skip[i]->forward(enc[i]->forward(x)));
    Tensor<T> h = feats.back();
    for (std::size_t i = 0; i < dec.size(); ++i) {
      h = dec[i]->forward(concat<T>({detail::up2(h), feats[feats.size() - 2 - i]}, 1));
    }
    return head->forward(detail::up2(h));
  }
  std::vector<std::shared_ptr<VisionPerformer<T>>> enc;
  std::vector<std::shared_ptr<ResidualBlock<T>>> skip, dec;
  std::shared_ptr<Conv2d<T>> head;
};

// CUnet-style convolutional encoder with a parallel Vision Performer at every
// level (patch 2^l, plus the bottleneck level L). The performer map is
// concatenated with the conv features, gated by SE and refined by a residual
// skip block; the conv path continues on its own features.
template <typename T>
class DeceptiConv : public Network<T> {
 public:
  DeceptiConv(const ModelSpec& s, Rng& rng, std::uint64_t seed) : Network<T>(s) {
    Index cin = s.in_channels;
    for (Index l = 0; l <= s.levels; ++l) {
      const bool bottom = l == s.levels;
      const Index c = bottom ? s.channels(s.levels - 1) : s.channels(l);
      const std::string id = std::to_string(l);
      if (bottom) {
        aspp = this->template child<ASPP<T>>("aspp", cin, c, rng);
      } else {
        enc.push_back(this->template child<ResidualBlock<T>>("enc" + id, cin, c, rng));
      }
      perf.push_back(this->template child<VisionPerformer<T>>("perf" + id, s, Index{1} << l, c,
                                                              derive_seed(seed, static_cast<std::uint64_t>(l)), rng));
      se.push_back(this->template child<SEBlock<T>>("se" + id, 2 * c, s.se_reduction, rng));
      skip.push_back(this->template child<ResidualBlock<T>>("skip" + id, 2 * c, c, rng));
      cin = c;
    }
    dec = this->template child<SkipDecoder<T, ResidualBlock<T>>>("dec", s, cin, rng);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    const std::size_t levels = enc.size();
    Tensor<T> bottom;
    for (std::size_t l = 0; l <= levels; ++l) {
      Tensor<T> conv_feat;
      if (l < levels) {
        conv_feat = enc[l]->forward(h);
        h = max_pool2d(conv_feat);
      } else {
        conv_feat = aspp->forward(h);
      }
      auto fused = skip[l]->forward(se[l]->forward(concat<T>({conv_feat, perf[l]->forward(x)}, 1)));
      if (l < levels) skips.push_back(fused);
      else bottom = fused;
    }
    return dec->forward(bottom, skips);
  }
  std::vector<std::shared_ptr<ResidualBlock<T>>> enc, skip;
  std::shared_ptr<ASPP<T>> aspp;
  std::vector<std::shared_ptr<VisionPerformer<T>>> perf;
  std::vector<std::shared_ptr<SEBlock<T>>> se;
  std::shared_ptr<SkipDecoder<T, ResidualBlock<T>>> dec;
};

// Two shifted-window blocks (shift 0, then window/2) on an NCHW map.
template <typename T>
class SwinStage : public Module<T> {
 public:
  SwinStage(Index dim, Index window, Index depth, std::uint64_t seed, Rng& rng) {
    for (Index i = 0; i < depth; ++i) {
      blocks.push_back(this->template child<SwinBlock<T>>("block" + std::to_string(i), dim, default_heads(dim),
                                                          window, i % 2 == 1 ? window / 2 : 0,
                                                          derive_seed(seed, static_cast<std::uint64_t>(i)), rng));
    }
  }
  // maps [B,H,W,C] -> [B,H,W,C]
  Tensor<T> forward(Tensor<T> x) const {
    ScopeGuard g(this->name());
    for (const auto& b : blocks) x = b->forward(x);
    return x;
  }
  std::vector<std::shared_ptr<SwinBlock<T>>> blocks;
};

// Per level: a learned embedding (1x1 conv at level 0, 2x2 stride-2 conv
// below), a residual conv branch and a shifted-window branch, concatenated,
// SE-gated; the gated map feeds the next level and a residual skip block.
template <typename T>
class SwinConvNet : public Network<T> {
 public:
  SwinConvNet(const ModelSpec& s, Rng& rng, std::uint64_t seed) : Network<T>(s) {
    Index cin = s.in_channels;
    for (Index l = 0; l <= s.levels; ++l) {
      const Index c = l == s.levels ? s.channels(s.levels - 1) : s.channels(l);
      const std::string id = std::to_string(l);
      Conv2dOptions opt = l == 0 ? Conv2dOptions{} : Conv2dOptions{2, 1, Padding::Valid};
      embed.push_back(this->template child<Conv2d<T>>("embed" + id, cin, c, l == 0 ? 1 : 2, rng, true, opt));
      conv.push_back(this->template child<ResidualBlock<T>>("conv" + id, c, c, rng));
      swin.push_back(this->template child<SwinStage<T>>("swin" + id, c, s.window, 2,
                                                        derive_seed(seed, static_cast<std::uint64_t>(l)), rng));
      se.push_back(this->template child<SEBlock<T>>("se" + id, 2 * c, s.se_reduction, rng));
      skip.push_back(this->template child<ResidualBlock<T>>("skip" + id, 2 * c, c, rng));
      cin = 2 * c;
    }
    dec = this->template child<SkipDecoder<T, ResidualBlock<T>>>("dec", s, s.channels(s.levels - 1), rng);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x, bottom;
    for (std::size_t l = 0; l < embed.size(); ++l) {
      auto e = embed[l]->forward(h);
      auto w = nhwc_to_nchw(swin[l]->forward(nchw_to_nhwc(e)));
      h = se[l]->forward(concat<T>({conv[l]->forward(e), w}, 1));
      auto sk = skip[l]->forward(h);
      if (l + 1 < embed.size()) skips.push_back(sk);
      else bottom = sk;
    }
    return dec->forward(bottom, skips);
  }
  std::vector<std::shared_ptr<Conv2d<T>>> embed;
  std::vector<std::shared_ptr<ResidualBlock<T>>> conv, skip;
  std::vector<std::shared_ptr<SwinStage<T>>> swin;
  std::vector<std::shared_ptr<SEBlock<T>>> se;
  std::shared_ptr<SkipDecoder<T, ResidualBlock<T>>> dec;
};

// ConvTranspose x2 -> concat skip -> residual block.
template <typename T>
class DeconvUpBlock : public Module<T> {
 public:
  DeconvUpBlock(Index cin, Index skip_channels, Index cout, Rng& rng) {
    up = this->template child<ConvTranspose2d<T>>("deconv", cin, cout, 2, rng);
    block = this->template child<ResidualBlock<T>>("block", cout + skip_channels, cout, rng);
  }
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip) const {
    ScopeGuard g(this->name());
    return block->forward(concat<T>({up->forward(x), skip}, 1));
  }
  std::shared_ptr<ConvTranspose2d<T>> up;
  std::shared_ptr<ResidualBlock<T>> block;
};

// Swin transformer encoder (2x2 patch embedding, L stages of two shifted-window
// blocks with patch merging) and a residual deconvolution decoder. Encoder
// hidden maps live at 1/2 .. 1/2^(L+1), so inputs must be divisible by 2^(L+1).
template <typename T>
class SwinUNETR : public Network<T> {
 public:
  SwinUNETR(const ModelSpec& s, Rng& rng, std::uint64_t seed) : Network<T>(s) {
    const Index f = s.width_base, L = s.levels;
    patch = this->template child<Conv2d<T>>("patch_embed", s.in_channels, f, 2, rng, true,
                                            Conv2dOptions{2, 1, Padding::Valid});
    for (Index i = 0; i < L; ++i) {
      const Index c = f << i;
      stages.push_back(this->template child<SwinStage<T>>("stage" + std::to_string(i), c, s.window, 2,
                                                          derive_seed(seed, static_cast<std::uint64_t>(i)), rng));
      merges.push_back(this->template child<PatchMerging<T>>("merge" + std::to_string(i), c, rng));
    }
    // encoders on the input and on hidden maps 0 .. L-2, plus the bottleneck
    enc.push_back(this->template child<ResidualBlock<T>>("enc_in", s.in_channels, f, rng));
    for (Index i = 0; i + 1 < L; ++i) {
      enc.push_back(this->template child<ResidualBlock<T>>("enc" + std::to_string(i), f << i, f << i, rng));
    }
    bottleneck = this->template child<ResidualBlock<T>>("bottleneck", f << L, f << L, rng);
    // decoder: 2^L f -> 2^(L-1) f [skip hidden L-1, used raw] -> ... -> f [enc0] -> f [enc_in]
    for (Index i = L - 1; i >= 0; --i) {
      up.push_back(this->template child<DeconvUpBlock<T>>("up" + std::to_string(i + 1), f << (i + 1), f << i, f << i,
                                                          rng));
    }
    up.push_back(this->template child<DeconvUpBlock<T>>("up0", f, f, f, rng));
    head = this->template child<Conv2d<T>>("head", f, s.num_classes, 1, rng, true);
  }
  Index divisor() const override { return Index{1} << (this->spec_.levels + 1); }

  Tensor<T> logits(const Tensor<T>& x) const override {
    const Index L = this->spec_.levels;
    std::vector<Tensor<T>> hidden;  // NCHW maps at 1/2 .. 1/2^(L+1)
    auto h = nchw_to_nhwc(patch->forward(x));
    hidden.push_back(nhwc_to_nchw(h));
    for (Index i = 0; i < L; ++i) {
      h = merges[i]->forward(stages[i]->forward(h));
      hidden.push_back(nhwc_to_nchw(h));
    }
    std::vector<Tensor<T>> skips;  // index 0 = full resolution
    skips.push_back(enc[0]->forward(x));
    for (Index i = 0; i + 1 < L; ++i) skips.push_back(enc[i + 1]->forward(hidden[i]));
    skips.push_back(hidden[L - 1]);
    Tensor<T> d = bottleneck->forward(hidden[L]);
    for (std::size_t k = 0; k < up.size(); ++k) d = up[k]->forward(d, skips[skips.size() - 1 - k]);
    return head->forward(d);
  }
  std::shared_ptr<Conv2d<T>> patch;
  std::vector<std::shared_ptr<SwinStage<T>>> stages;
  std::vector<std::shared_ptr<PatchMerging<T>>> merges;
  std::vector<std::shared_ptr<ResidualBlock<T>>> enc;
  std::shared_ptr<ResidualBlock<T>> bottleneck;
  std::vector<std::shared_ptr<DeconvUpBlock<T>>> up;
  std::shared_ptr<Conv2d<T>> head;
};

// Upsamples a transformer feature map by 2^steps: ConvTranspose to the target
// width, then (steps-1) x [ConvTranspose + conv-norm-GeLU].
template <typename T>
class DeconvStack : public Module<T> {
 public:
  DeconvStack(Index cin, Index cout, Index steps, Rng& rng) {
    first = this->template child<ConvTranspose2d<T>>("deconv0", cin, cout, 2, rng);
    for (Index i = 1; i < steps; ++i) {
      ups.push_back(this->template child<ConvTranspose2d<T>>("deconv" + std::to_string(i), cout, cout, 2, rng));
      convs.push_back(this->template child<ConvNormAct<T>>("conv" + std::to_string(i), cout, cout, 3, rng));
    }
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    ScopeGuard g(this->name());
    auto h = first->forward(x);
    for (std::size_t i = 0; i < ups.size(); ++i) h = convs[i]->forward(ups[i]->forward(h));
    return h;
  }
  std::shared_ptr<ConvTranspose2d<T>> first;
  std::vector<std::shared_ptr<ConvTranspose2d<T>>> ups;
  std::vector<std::shared_ptr<ConvNormAct<T>>> convs;
};

// ViT encoder (patch 2^L, exact attention) with skip taps evenly spaced over
// the layers, deconvolved to resolutions 1/2 .. 1/2^(L-1); residual decoder.
template <typename T>
class UNETR : public Network<T> {
 public:
  UNETR(const ModelSpec& s, Rng& rng, std::uint64_t seed) : Network<T>(s) {
    const Index L = s.levels, D = s.vit_dim, f = s.vit_feature, p = Index{1} << L;
    const Index grid = std::max<Index>(1, s.image_extent / p);
    embed = this->template child<PatchEmbed<T>>("embed", s.in_channels, p, D, grid, grid, rng);
    for (Index i = 0; i < s.vit_layers; ++i) {
      AttentionConfig cfg{D, default_heads(D), AttentionVariant::Exact, std::nullopt, std::nullopt, std::nullopt,
                          derive_seed(seed, static_cast<std::uint64_t>(i))};
      layers.push_back(this->template child<TransformerBlock<T>>("layer" + std::to_string(i), cfg, rng));
    }
    for (Index i = 1; i <= L; ++i) taps.push_back(s.vit_layers * i / L - 1);
    enc0 = this->template child<ResidualBlock<T>>("enc0", s.in_channels, f, rng);
    for (Index i = 1; i < L; ++i) {
      proj.push_back(this->template child<DeconvStack<T>>("skip" + std::to_string(i), D, f << i, L - i, rng));
    }
    up.push_back(this->template child<DeconvUpBlock<T>>("up" + std::to_string(L - 1), D, f << (L - 1), f << (L - 1),
                                                        rng));
    for (Index i = L - 2; i >= 0; --i) {
      up.push_back(this->template child<DeconvUpBlock<T>>("up" + std::to_string(i), f << (i + 1), f << i, f << i, rng));
    }
    head = this->template child<Conv2d<T>>("head", f, s.num_classes, 1, rng, true);
  }
  Tensor<T> logits(const Tensor<T>& x) const override {
    const Index L = this->spec_.levels, p = Index{1} << L;
    const Index gh = x.dim(2) / p, gw = x.dim(3) / p;
    auto z = embed->forward(x);
    std::vector<Tensor<T>> tapped;
    std::size_t next = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      z = layers[i]->forward(z);
      if (next < taps.size() && static_cast<Index>(i) == taps[next]) {
        tapped.push_back(detail::tokens_to_map(z, gh, gw));
        ++next;
      }
    }
    std::vector<Tensor<T>> skips{enc0->forward(x)};
    for (Index i = 1; i < L; ++i) skips.push_back(proj[i - 1]->forward(tapped[i - 1]));
    Tensor<T> d = tapped.back();
    for (std::size_t k = 0; k < up.size(); ++k) d = up[k]->forward(d, skips[skips.size() - 1 - k]);
    return head->forward(d);
  }
  std::shared_ptr<PatchEmbed<T>> embed;
  std::vector<std::shared_ptr<TransformerBlock<T>>> layers;
  std::vector<Index> taps;
  std::shared_ptr<ResidualBlock<T>> enc0;
  std::vector<std::shared_ptr<DeconvStack<T>>> proj;
  std::vector<std::shared_ptr<DeconvUpBlock<T>>> up;
  std::shared_ptr<Conv2d<T>> head;
};

// -----------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed, std::shared_ptr<Network<T>> net)
      : spec_(std::move(spec)), seed_(seed), net_(std::move(net)) {}

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  Network<T>& network() const { return *net_; }
  bool training() const { return net_->training(); }
  void train() { net_->set_training(true); }
  void eval() { net_->set_training(false); }

  std::vector<NamedParam<T>> parameters() const { return net_->parameters(); }
  std::vector<NamedBuffer<T>> buffers() const { return net_->buffers(); }

  // Zero-pads bottom/right to the architecture's divisor, crops the logits back.
  Tensor<T> forward_logits(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != spec_.in_channels) {
      throw DimensionError("model input must be [N," + std::to_string(spec_.in_channels) + ",H,W], got " +
                           to_string(image.shape()));
    }
    const Index div = net_->divisor(), h = image.dim(2), w = image.dim(3);
    const Index ph = (div - h % div) % div, pw = (div - w % div) % div;
    if (ph == 0 && pw == 0) return net_->logits(image);
    auto y = net_->logits(pad(image, {{0, 0}, {0, 0}, {0, ph}, {0, pw}}));
    return crop(y, {0, 0, 0, 0}, {y.dim(0), y.dim(1), h, w});
  }

  // Class probabilities [N, C, H, W]; softmax over the class axis.
  Tensor<T> forward_probs(const Tensor<T>& image) const { return softmax(forward_logits(image), 1); }

 private:
  ModelSpec spec_;
  std::uint64_t seed_;
  std::shared_ptr<Network<T>> net_;
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "init." + arch_name(spec.arch)));
  const std::uint64_t attn_seed = derive_seed(seed, "attention");
  std::shared_ptr<Network<T>> net;
  switch (spec.arch) {
    case Arch::UNet: net = std::make_shared<UNet<T>>(spec, rng); break;
    case Arch::CUNet: net = std::make_shared<CUNet<T>>(spec, rng); break;
    case Arch::UNETR: net = std::make_shared<UNETR<T>>(spec, rng, attn_seed); break;
    case Arch::SwinUNETR: net = std::make_shared<SwinUNETR<T>>(spec, rng, attn_seed); break;
    case Arch::MSUneTr: net = std::make_shared<MSUneTr<T>>(spec, rng, attn_seed); break;
    case Arch::DeceptiConv: net = std::make_shared<DeceptiConv<T>>(spec, rng, attn_seed); break;
    case Arch::SwinConvNet: net = std::make_shared<SwinConvNet<T>>(spec, rng, attn_seed); break;
  }
  return Model<T>(spec, seed, std::move(net));
}

struct ParamBreakdown {
  Index total = 0;
  // top-level module name -> scalar count, in parameter order
  std::vector<std::pair<std::string, Index>> modules;
};

template <typename T>
ParamBreakdown count_params(const Model<T>& model) {
  ParamBreakdown b;
  for (const auto& p : model.parameters()) {
    const auto dot = p.name.find('.');
    const std::string top = dot == std::string::npos ? p.name : p.name.substr(0, dot);
    if (b.modules.empty() || b.modules.back().first != top) b.modules.push_back({top, 0});
    b.modules.back().second += p.tensor.numel();
    b.total += p.tensor.numel();
  }
  return b;
}

}  // namespace oarseg
