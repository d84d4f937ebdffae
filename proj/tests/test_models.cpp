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


#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "oarseg/models.hpp"

namespace oarseg {
namespace {

using TF = Tensor<float>;

TF random_image(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(numel_of(s)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return TF::from(std::move(s), std::move(v));
}

// Closed-form recount of the U-Net: a DoubleConv(a->m->b) has
// 9am + 2m + 9mb + 2b scalars (bias-free convs, BN gain/offset).
Index unet_closed_form(Index w, Index levels, Index cin, Index classes) {
  auto dc = [](Index a, Index m, Index b) { return 9 * a * m + 2 * m + 9 * m * b + 2 * b; };
  Index total = 0, prev = cin;
  for (Index l = 0; l < levels; ++l) {
    total += dc(prev, w << l, w << l);
    prev = w << l;
  }
  total += dc(prev, 2 * prev, prev);
  for (Index l = levels - 1; l >= 0; --l) {
    const Index out = l > 0 ? w << (l - 1) : w;
    total += dc(prev + (w << l), out, out);
    prev = out;
  }
  return total + prev * classes + classes;
}

class AllArchs : public ::testing::TestWithParam<Arch> {};

TEST(ParamCount, SingleConv) {
  Rng rng(1);
  Conv2d<float> c(1, 1, 3, rng, true);
  EXPECT_EQ(c.num_parameters(), 10);
}

TEST(ParamCount, UNetPaperAnchor) {
  auto m = build_model<float>(ModelSpec::preset(Arch::UNet, ScalePreset::Paper), 0);
  EXPECT_EQ(count_params(m).total, 10188773);
  EXPECT_EQ(count_params(m).total, unet_closed_form(48, 4, 1, 5));
}

TEST(ParamCount, WidthScalingIsQuadratic) {
  auto s = ModelSpec::preset(Arch::UNet, ScalePreset::Paper);
  const double big = static_cast<double>(count_params(build_model<float>(s, 0)).total);
  s.width_base = 24;
  const auto small_count = count_params(build_model<float>(s, 0)).total;
  EXPECT_EQ(small_count, unet_closed_form(24, 4, 1, 5));
  const double r = static_cast<double>(small_count) / big;
  EXPECT_GT(r, 0.24);
  EXPECT_LT(r, 0.26);
}

TEST(ParamCount, BreakdownSumsToTotal) {
  auto m = build_model<float>(ModelSpec::preset(Arch::DeceptiConv, ScalePreset::Desk), 0);
  auto b = count_params(m);
  Index s = 0;
  for (const auto& [name, c] : b.modules) s += c;
  EXPECT_EQ(s, b.total);
  EXPECT_EQ(b.modules.front().first, "enc0");
  EXPECT_EQ(b.modules.back().first, "dec");
}

TEST(ModelSpecTest, Validation) {
  auto s = ModelSpec::preset(Arch::UNet, ScalePreset::Desk);
  s.width_base = 4;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ModelSpec::preset(Arch::UNet, ScalePreset::Desk);
  s.levels = 1;
  EXPECT_THROW(build_model<float>(s, 0), ValidationError);
  s.levels = 3;
  s.num_classes = 1;
  EXPECT_THROW(build_model<float>(s, 0), ValidationError);
  EXPECT_THROW(parse_arch("resnet"), ValidationError);
  for (Arch a : all_archs()) EXPECT_EQ(parse_arch(arch_name(a)), a);
}

TEST(ModelInput, WrongChannelsRejected) {
  auto m = build_model<float>(ModelSpec::preset(Arch::UNet, ScalePreset::Desk), 0);
  EXPECT_THROW(m.forward_probs(TF::zeros({1, 2, 32, 32})), DimensionError);
}

TEST_P(AllArchs, ShapesProbabilitiesAndGradientFlow) {
  auto m = build_model<float>(ModelSpec::preset(GetParam(), ScalePreset::Desk), 3);
  m.train();
  auto x = random_image({1, 1, 96, 96}, 11);
  auto p = m.forward_probs(x);
  ASSERT_EQ(p.shape(), (Shape{1, 5, 96, 96}));
  for (Index i = 0; i < 96 * 96; ++i) {
    double s = 0;
    for (Index c = 0; c < 5; ++c) s += p[c * 96 * 96 + i];
    ASSERT_NEAR(s, 1.0, 1e-5);
  }
  auto w = random_image(p.shape(), 12);
  sum(p * w).backward();
  Index zero = 0, total = 0;
  for (const auto& np : m.parameters()) {
    ASSERT_TRUE(np.tensor.has_grad()) << np.name;
    for (float g : np.tensor.grad()) zero += g == 0.0f;
    total += np.tensor.numel();
  }
  EXPECT_LT(static_cast<double>(zero) / static_cast<double>(total), 0.05);
}

TEST_P(AllArchs, BuildAndEvalForwardAreDeterministic) {
  const auto spec = ModelSpec::preset(GetParam(), ScalePreset::Desk);
  auto a = build_model<float>(spec, 5);
  auto b = build_model<float>(spec, 5);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    ASSERT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
  }
  a.eval();
  NoGradGuard ng;
  auto x = random_image({1, 1, 64, 64}, 2);
  auto y1 = a.forward_probs(x), y2 = a.forward_probs(x);
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST_P(AllArchs, BatchEquivarianceInEval) {
  auto m = build_model<float>(ModelSpec::preset(GetParam(), ScalePreset::Desk), 8);
  m.eval();
  NoGradGuard ng;
  auto x0 = random_image({1, 1, 48, 48}, 20), x1 = random_image({1, 1, 48, 48}, 21);
  auto y01 = m.forward_probs(concat<float>({x0, x1}, 0));
  auto y10 = m.forward_probs(concat<float>({x1, x0}, 0));
  const Index n = y01.numel() / 2;
  for (Index i = 0; i < n; ++i) {
    ASSERT_NEAR(y01[i], y10[n + i], 1e-5);
    ASSERT_NEAR(y01[n + i], y10[i], 1e-5);
  }
}

TEST_P(AllArchs, NonDivisibleInputIsPaddedAndCropped) {
  auto m = build_model<float>(ModelSpec::preset(GetParam(), ScalePreset::Desk), 1);
  m.eval();
  NoGradGuard ng;
  auto p = m.forward_probs(random_image({1, 1, 37, 45}, 3));
  EXPECT_EQ(p.shape(), (Shape{1, 5, 37, 45}));
}

TEST_P(AllArchs, CountInvariantToModeAndForward) {
  auto m = build_model<float>(ModelSpec::preset(GetParam(), ScalePreset::Desk), 1);
  const Index before = count_params(m).total;
  m.eval();
  {
    NoGradGuard ng;
    m.forward_probs(random_image({1, 1, 32, 32}, 3));
  }
  m.train();
  EXPECT_EQ(count_params(m).total, before);
}

TEST(Models, MSUneTrSmoke64) {
  auto m = build_model<float>(ModelSpec::preset(Arch::MSUneTr, ScalePreset::Desk), 0);
  auto p = m.forward_probs(random_image({2, 1, 64, 64}, 1));
  EXPECT_EQ(p.shape(), (Shape{2, 5, 64, 64}));
}

INSTANTIATE_TEST_SUITE_P(Desk, AllArchs, ::testing::ValuesIn(all_archs()),
                         [](const auto& info) { return arch_name(info.param); });

}  // namespace
}  // namespace oarseg
