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

#include <functional>
#include <string>
#include <vector>

#include "oarseg/attention.hpp"
#include "oarseg/gradcheck.hpp"
#include "oarseg/loss.hpp"
#include "oarseg/nn.hpp"

namespace oarseg {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0;
  Index checked = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> seeded(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(derive_seed(seed, "gradient_suite"));
  std::vector<double> v(static_cast<std::size_t>(numel_of(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(s), std::move(v), true);
}

template <class M>
std::vector<Tensor<double>> with_params(const M& m, std::vector<Tensor<double>> extra) {
  for (auto& p : m.parameters()) extra.push_back(p.tensor);
  return extra;
}

}  // namespace detail

// Every differentiable op and block on seeded miniature 64-bit instances.
inline std::vector<GradSuiteEntry> run_gradient_suite(double tol = 1e-4, std::uint64_t seed = 0) {
  using detail::seeded;
  using detail::with_params;
  using T = Tensor<double>;
  std::vector<GradSuiteEntry> out;
  auto check = [&](const std::string& name, const std::function<T()>& f, std::vector<T> wrt) {
    const auto r = grad_check(f, std::move(wrt), tol, seed);
    out.push_back({name, r.max_rel_err, r.checked, r.pass});
  };

  auto a = seeded({3, 4}, 1), b = seeded({3, 4}, 2), row = seeded({1, 4}, 3), pos = seeded({3, 4}, 4, 0.5, 2.0);
  check("add", [&] { return add(a, row); }, {a, row});
  check("sub", [&] { return sub(a, b); }, {a, b});
  check("mul", [&] { return mul(a, row); }, {a, row});
  check("div", [&] { return div(a, pos); }, {a, pos});
  check("exp", [&] { return exp(a); }, {a});
  check("log", [&] { return log(pos); }, {pos});
  check("square", [&] { return square(a); }, {a});
  check("sigmoid", [&] { return sigmoid(a); }, {a});
  check("gelu", [&] { return gelu(a); }, {a});
  check("scale", [&] { return scale(add_scalar(a, 2.0), -1.5); }, {a});

  auto t3 = seeded({2, 3, 4}, 5), u3 = seeded({2, 2, 4}, 6);
  check("sum", [&] { return sum(t3); }, {t3});
  check("mean", [&] { return mean(t3); }, {t3});
  check("sum_axis", [&] { return sum(t3, 1); }, {t3});
  check("mean_axis", [&] { return mean(t3, -1, true); }, {t3});
  check("softmax", [&] { return softmax(t3, 1); }, {t3});
  check("permute", [&] { return permute(t3, {2, 0, 1}); }, {t3});
  check("reshape", [&] { return reshape(t3, {6, 4}); }, {t3});
  check("concat", [&] { return concat<double>({t3, u3}, 1); }, {t3, u3});
  check("pad", [&] { return pad(t3, {{1, 0}, {0, 2}, {1, 1}}); }, {t3});
  check("crop", [&] { return crop(t3, {1, 1, 0}, {1, 2, 3}); }, {t3});
  check("roll", [&] { return roll(t3, {1, -1, 2}); }, {t3});

  auto m1 = seeded({4, 5}, 7), m2 = seeded({2, 5, 4}, 8);
  check("matmul", [&] { return matmul(t3, m1); }, {t3, m1});
  check("matmul_transposed", [&] { return matmul(t3, m2, Transpose::No, Transpose::Yes); }, {t3, m2});

  auto x = seeded({1, 2, 6, 6}, 9), k = seeded({3, 2, 3, 3}, 10), bias = seeded({3}, 11);
  check("conv2d", [&] { return conv2d(x, k, bias, {1, 2, Padding::Same}); }, {x, k, bias});
  check("conv2d_strided", [&] { return conv2d(x, k, bias, {2, 1, Padding::Valid}); }, {x, k, bias});
  auto kt = seeded({2, 3, 2, 2}, 12);
  check("conv_transpose2d", [&] { return conv_transpose2d(x, kt, bias); }, {x, kt, bias});
  auto p = seeded({2, 2, 4, 6}, 13);
  check("max_pool2d", [&] { return max_pool2d(p); }, {p});
  check("bilinear_upsample", [&] { return bilinear_upsample(p, 2); }, {p});
  auto g = seeded({2}, 14), o = seeded({2}, 15), g6 = seeded({6}, 16), o6 = seeded({6}, 17);
  check("batch_norm", [&] { return normalize(p, NormMode::Batch, g, o, 1e-5); }, {p, g, o});
  check("instance_norm", [&] { return normalize(p, NormMode::Instance, g, o, 1e-5); }, {p, g, o});
  check("layer_norm", [&] { return normalize(p, NormMode::Layer, g6, o6, 1e-5); }, {p, g6, o6});

  auto q = seeded({1, 2, 5, 4}, 18), kk = seeded({1, 2, 5, 4}, 19), v = seeded({1, 2, 5, 4}, 20);
  check("attention_exact", [&] { return attention_exact(q, kk, v); }, {q, kk, v});
  auto feats = orthogonal_features<double>(16, 4, derive_seed(seed, "features"));
  check("attention_performer", [&] { return attention_performer(q, kk, v, feats); }, {q, kk, v});
  auto map = seeded({1, 5, 6, 4}, 21);
  check("window_attention", [&] { return window_attention(map, AttentionConfig{4, 2, AttentionVariant::Window, 4, 2}); },
        {map});

  Rng rng(derive_seed(seed, "blocks"));
  auto img = seeded({2, 2, 5, 5}, 22);
  ResidualBlock<double> rb(2, 3, rng);
  check("ResidualBlock", [&] { return rb.forward(img); }, with_params(rb, {img}));
  DoubleConv<double> dc(2, 2, rng);
  check("DoubleConv", [&] { return dc.forward(img); }, with_params(dc, {img}));
  ConvTranspose2d<double> up(2, 3, 2, rng);
  check("ConvTranspose2d", [&] { return up.forward(img); }, with_params(up, {img}));
  ASPP<double> aspp(2, 2, rng);
  auto img9 = seeded({1, 2, 9, 9}, 23);
  check("ASPP", [&] { return aspp.forward(img9); }, with_params(aspp, {img9}));
  SEBlock<double> se(4, 2, rng);
  auto img4 = seeded({2, 4, 3, 3}, 24);
  check("SEBlock", [&] { return se.forward(img4); }, with_params(se, {img4}));
  PatchEmbed<double> pe(1, 2, 8, 2, 2, rng);
  auto small = seeded({1, 1, 4, 4}, 25);
  check("PatchEmbed", [&] { return pe.forward(small); }, with_params(pe, {small}));
  auto tokens = seeded({2, 4, 8}, 26);
  TransformerBlock<double> exact(AttentionConfig{8, 2, AttentionVariant::Exact}, rng);
  check("TransformerBlock", [&] { return exact.forward(tokens); }, with_params(exact, {tokens}));
  TransformerBlock<double> perf(AttentionConfig{8, 2, AttentionVariant::Performer, std::nullopt, std::nullopt, 16, 5},
                                rng);
  perf.set_training(false);
  check("PerformerBlock", [&] { return perf.forward(tokens); }, with_params(perf, {tokens}));
  auto grid = seeded({1, 4, 4, 8}, 27);
  SwinBlock<double> swin(8, 2, 2, 1, 0, rng);
  check("SwinBlock", [&] { return swin.forward(grid); }, with_params(swin, {grid}));
  PatchMerging<double> merge(8, rng);
  check("PatchMerging", [&] { return merge.forward(grid); }, with_params(merge, {grid}));

  auto logits = seeded({2, 3, 3, 3}, 28);
  std::vector<std::uint8_t> labels(18);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>((i * 7 + 1) % 3);
  check("dice_ce_loss", [&] { return dice_ce_loss(softmax(logits, 1), labels); }, {logits});
  return out;
}

}  // namespace oarseg
