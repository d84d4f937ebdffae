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

#include <cmath>
#include <numbers>

#include "oarseg/gradcheck.hpp"
#include "oarseg/ops.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {
namespace {

using T64 = Tensor<double>;

T64 random_tensor(Shape s, std::uint64_t seed, bool rg = true) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(numel_of(s)));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return T64::from(std::move(s), std::move(v), rg);
}

void expect_values(const T64& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), static_cast<Index>(want.size()));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[static_cast<Index>(i)], want[i], tol) << "at " << i;
}

// Scalar-loop cross-correlation used as the reference implementation.
std::vector<double> conv_oracle(const T64& x, const T64& k, Index stride, Index dil, bool same) {
  const Index n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ph = same ? dil * (kh - 1) / 2 : 0, pw = same ? dil * (kw - 1) / 2 : 0;
  const Index ho = (h + 2 * ph - dil * (kh - 1) - 1) / stride + 1, wo = (w + 2 * pw - dil * (kw - 1) - 1) / stride + 1;
  std::vector<double> out;
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < co; ++o)
      for (Index i = 0; i < ho; ++i)
        for (Index j = 0; j < wo; ++j) {
          double s = 0;
          for (Index c = 0; c < ci; ++c)
            for (Index a = 0; a < kh; ++a)
              for (Index e = 0; e < kw; ++e) {
                const Index y = i * stride - ph + a * dil, xx = j * stride - pw + e * dil;
                if (y >= 0 && y < h && xx >= 0 && xx < w)
                  s += x[((b * ci + c) * h + y) * w + xx] * k[((o * ci + c) * kh + a) * kw + e];
              }
          out.push_back(s);
        }
  return out;
}

TEST(Conv2d, PointwiseScaling) {
  auto x = T64::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto k = T64::from({1, 1, 1, 1}, {2});
  expect_values(conv2d(x, k, std::nullopt), {2, 4, 6, 8});
}

TEST(Conv2d, SamePaddingOnes) {
  auto y = conv2d(T64::full({1, 1, 3, 3}, 1), T64::full({1, 1, 3, 3}, 1), std::nullopt);
  expect_values(y, {4, 6, 4, 6, 9, 6, 4, 6, 4});
}

TEST(Conv2d, DilatedCenter) {
  auto y = conv2d(T64::full({1, 1, 5, 5}, 1), T64::full({1, 1, 3, 3}, 1), std::nullopt, {1, 2, Padding::Same});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_DOUBLE_EQ(y[12], 9.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  for (auto [stride, dil, same] : std::vector<std::tuple<Index, Index, bool>>{
           {1, 1, true}, {2, 1, true}, {1, 2, true}, {1, 1, false}, {2, 1, false}, {1, 3, true}}) {
    auto x = random_tensor({2, 3, 7, 6}, 11, false);
    auto k = random_tensor({4, 3, 3, 3}, 12, false);
    auto y = conv2d(x, k, std::nullopt, {stride, dil, same ? Padding::Same : Padding::Valid});
    expect_values(y, conv_oracle(x, k, stride, dil, same), 1e-12);
  }
}

TEST(Conv2d, IdentityKernel) {
  auto x = random_tensor({1, 3, 5, 5}, 3, false);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
  auto y = conv2d(x, T64::from({3, 3, 1, 1}, eye), std::nullopt);
  expect_values(y, std::vector<double>(x.data().begin(), x.data().end()), 0.0);
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(T64::zeros({1, 2, 4, 4}), T64::zeros({1, 3, 3, 3}), std::nullopt), DimensionError);
  EXPECT_THROW(conv2d(T64::zeros({1, 1, 4, 4}), T64::zeros({1, 1, 2, 2}), std::nullopt), DimensionError);
}

TEST(Bilinear, ConstantAndRow) {
  auto c = bilinear_upsample(T64::full({1, 1, 3, 2}, 5.0), 2);
  for (double v : c.data()) EXPECT_EQ(v, 5.0);
  // A 1x2 row upsampled by 2 gives two identical rows.
  expect_values(bilinear_upsample(T64::from({1, 1, 1, 2}, {0, 4}), 2), {0, 1, 3, 4, 0, 1, 3, 4});
  EXPECT_EQ(bilinear_upsample(T64::zeros({1, 1, 2, 2}), 2).shape(), (Shape{1, 1, 4, 4}));
  EXPECT_THROW(bilinear_upsample(T64::zeros({1, 1, 2, 2}), 1), DimensionError);
}

TEST(Bilinear, MatchesHalfPixelOracle) {
  auto x = random_tensor({1, 2, 3, 4}, 5, false);
  const Index f = 3;
  auto y = bilinear_upsample(x, f);
  auto coord = [&](Index o, Index n) {
    double s = std::max(0.0, (o + 0.5) / f - 0.5);
    Index i0 = std::min<Index>(static_cast<Index>(std::floor(s)), n - 1);
    return std::tuple{i0, std::min(i0 + 1, n - 1), s - i0};
  };
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < 9; ++i)
      for (Index j = 0; j < 12; ++j) {
        auto [y0, y1, ly] = coord(i, 3);
        auto [x0, x1, lx] = coord(j, 4);
        auto at = [&](Index a, Index b) { return x[(c * 3 + a) * 4 + b]; };
        const double want = (1 - ly) * ((1 - lx) * at(y0, x0) + lx * at(y0, x1)) + ly * ((1 - lx) * at(y1, x0) + lx * at(y1, x1));
        EXPECT_NEAR(y[(c * 9 + i) * 12 + j], want, 1e-14);
      }
}

TEST(Gelu, Values) {
  auto y = gelu(T64::from({3}, {0.0, 10.0, 1.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 10.0, 1e-9);
  EXPECT_NEAR(y[2], 0.5 * (1 + std::erf(1 / std::numbers::sqrt2)), 1e-15);
  EXPECT_NEAR(y[2], 0.8413447460685429, 1e-12);
}

TEST(Softmax, Values) {
  expect_values(softmax(T64::from({2}, {0, 0}), 0), {0.5, 0.5});
  expect_values(softmax(T64::from({2}, {1000, 1000}), 0), {0.5, 0.5});
  expect_values(softmax(T64::from({2}, {0, std::log(3.0)}), 0), {0.25, 0.75}, 1e-15);
}

TEST(Softmax, SumsToOneAlongAxis) {
  auto x = scale(random_tensor({3, 4, 5}, 9, false), 30.0);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = sum(softmax(x, axis), axis);
    for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(Normalize, Examples) {
  auto one = T64::full({2}, 1), zero = T64::zeros({2});
  for (auto mode : {NormMode::Batch, NormMode::Instance}) {
    auto y = normalize(T64::full({2, 2, 3, 3}, 4.0), mode, one, zero, 1e-5);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
  auto ln = normalize(T64::from({1, 2}, {1, 3}), NormMode::Layer, one, zero, 1e-12);
  expect_values(ln, {-1, 1}, 1e-9);
  auto five = normalize(random_tensor({1, 2}, 1, false), NormMode::Layer, zero, T64::full({2}, 5), 1e-5);
  expect_values(five, {5, 5}, 0.0);
  EXPECT_THROW(normalize(T64::from({1, 2}, {1, 3}), NormMode::Layer, one, zero, 0.0), ValidationError);
}

TEST(Matmul, Examples) {
  auto m = random_tensor({2, 2}, 4, false);
  expect_values(matmul(T64::from({2, 2}, {1, 0, 0, 1}), m), std::vector<double>(m.data().begin(), m.data().end()));
  expect_values(matmul(T64::from({2, 2}, {1, 2, 3, 4}), T64::from({2, 1}, {1, 1})), {3, 7});
  EXPECT_EQ(matmul(T64::zeros({2, 3}), T64::zeros({3, 4})).shape(), (Shape{2, 4}));
  EXPECT_THROW(matmul(T64::zeros({2, 3}), T64::zeros({2, 4})), DimensionError);
}

TEST(Matmul, BroadcastAndTransposeAgreeWithLoops) {
  auto a = random_tensor({2, 1, 3, 4}, 21, false);
  auto b = random_tensor({1, 3, 4, 5}, 22, false);
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 3, 5}));
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index r = 0; r < 3; ++r)
        for (Index s = 0; s < 5; ++s) {
          double want = 0;
          for (Index k = 0; k < 4; ++k) want += a[(i * 3 + r) * 4 + k] * b[(j * 4 + k) * 5 + s];
          EXPECT_NEAR(c[((i * 3 + j) * 3 + r) * 5 + s], want, 1e-13);
        }
  auto at = permute(a, {0, 1, 3, 2}).detach();
  auto bt = permute(b, {0, 1, 3, 2}).detach();
  auto c2 = matmul(at, bt, Transpose::Yes, Transpose::Yes);
  for (Index i = 0; i < c.numel(); ++i) EXPECT_NEAR(c2[i], c[i], 1e-13);
}

TEST(Backward, Basics) {
  auto x = random_tensor({2, 3}, 1);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  auto y = T64::from({3}, {1, 2, 3}, true);
  sum(mul(y, y)).backward();
  expect_values(T64::from({3}, std::vector<double>(y.grad().begin(), y.grad().end())), {2, 4, 6});

  // repeated calls accumulate
  auto z = T64::from({2}, {1, 2}, true);
  auto loss = sum(scale(z, 3.0));
  loss.backward(true);
  loss.backward();
  EXPECT_EQ(z.grad()[0], 6.0);
}

TEST(Backward, FanOutAddsPathGradients) {
  auto x = T64::from({2}, {0.5, -1.5}, true);
  auto loss = sum(add(exp(x), mul(x, x)));
  loss.backward();
  for (Index i = 0; i < 2; ++i) EXPECT_NEAR(x.grad()[i], std::exp(x[i]) + 2 * x[i], 1e-14);
}

TEST(Backward, Errors) {
  EXPECT_THROW(T64::from({1}, {1.0}).backward(), GraphError);
  auto x = random_tensor({2}, 1);
  EXPECT_THROW(mul(x, x).backward(), GraphError);
  {
    NoGradGuard ng;
    EXPECT_THROW(sum(x).backward(), GraphError);
  }
}

TEST(Backward, GraphFreedAfterBackward) {
  auto x = random_tensor({4}, 2);
  auto mid = exp(x);
  auto loss = sum(mid);
  loss.backward();
  EXPECT_TRUE(mid.node()->inputs.empty());
  EXPECT_FALSE(static_cast<bool>(mid.node()->backward_fn));
}

TEST(Tensor, NonFiniteIsNumericError) {
  EXPECT_THROW(log(T64::from({1}, {0.0})), NumericError);
  try {
    ScopeGuard outer("encoder");
    ScopeGuard inner("conv1");
    div(T64::from({1}, {1.0}), T64::from({1}, {0.0}));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.op(), "div");
    EXPECT_EQ(e.scope(), "encoder.conv1");
  }
  EXPECT_THROW(T64::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Layout, PadCropRollConcatPermute) {
  auto x = T64::from({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(pad(x, {{0, 1}, {1, 0}}), {0, 1, 2, 3, 0, 4, 5, 6, 0, 0, 0, 0});
  expect_values(crop(x, {0, 1}, {2, 2}), {2, 3, 5, 6});
  expect_values(roll(x, {0, 1}), {3, 1, 2, 6, 4, 5});
  expect_values(concat<double>({x, x}, 1), {1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6});
  expect_values(permute(x, {1, 0}), {1, 4, 2, 5, 3, 6});
  expect_values(sum(x, 0), {5, 7, 9});
  expect_values(mean(x, 1, true), {2, 5});
  EXPECT_EQ(reshape(x, {3, -1}).shape(), (Shape{3, 2}));
}

// -----------------------------------------------------------------------------
// Gradient checks for every differentiable op at tol 1e-4.

constexpr double kTol = 1e-4;

void expect_grad_ok(const std::function<T64()>& f, std::vector<T64> wrt) {
  const auto r = grad_check(f, std::move(wrt), kTol, 7);
  EXPECT_TRUE(r.pass) << "max rel err " << r.max_rel_err << " tensor " << r.worst_tensor << " index "
                      << r.worst_index;
}

TEST(GradCheck, Elementwise) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2), c = random_tensor({1, 4}, 3);
  auto pos = T64::from({3, 4}, std::vector<double>(12, 0.0), true);
  for (Index i = 0; i < 12; ++i) pos.raw()[i] = 0.5 + 0.1 * static_cast<double>(i);
  expect_grad_ok([&] { return add(a, c); }, {a, c});
  expect_grad_ok([&] { return sub(a, b); }, {a, b});
  expect_grad_ok([&] { return mul(a, c); }, {a, c});
  expect_grad_ok([&] { return div(a, pos); }, {a, pos});
  expect_grad_ok([&] { return exp(a); }, {a});
  expect_grad_ok([&] { return log(pos); }, {pos});
  expect_grad_ok([&] { return sigmoid(a); }, {a});
  expect_grad_ok([&] { return square(a); }, {a});
  expect_grad_ok([&] { return scale(add_scalar(a, 2.0), -1.5); }, {a});
}

TEST(GradCheck, GeluRandom8) {
  auto x = random_tensor({8}, 42);
  expect_grad_ok([&] { return gelu(x); }, {x});
}

TEST(GradCheck, Reductions) {
  auto a = random_tensor({2, 3, 4}, 5);
  expect_grad_ok([&] { return sum(a); }, {a});
  expect_grad_ok([&] { return mean(a); }, {a});
  expect_grad_ok([&] { return sum(a, 1); }, {a});
  expect_grad_ok([&] { return mean(a, -1, true); }, {a});
  expect_grad_ok([&] { return softmax(a, 1); }, {a});
  expect_grad_ok([&] { return softmax(a, -1); }, {a});
}

TEST(GradCheck, Layout) {
  auto a = random_tensor({2, 3, 4}, 6), b = random_tensor({2, 2, 4}, 7);
  expect_grad_ok([&] { return permute(a, {2, 0, 1}); }, {a});
  expect_grad_ok([&] { return reshape(a, {6, 4}); }, {a});
  expect_grad_ok([&] { return concat<double>({a, b}, 1); }, {a, b});
  expect_grad_ok([&] { return pad(a, {{1, 0}, {0, 2}, {1, 1}}); }, {a});
  expect_grad_ok([&] { return crop(a, {1, 1, 0}, {1, 2, 3}); }, {a});
  expect_grad_ok([&] { return roll(a, {1, -1, 2}); }, {a});
}

TEST(GradCheck, Matmul) {
  auto a = random_tensor({2, 3, 4}, 8), b = random_tensor({4, 5}, 9), c = random_tensor({2, 5, 4}, 10);
  expect_grad_ok([&] { return matmul(a, b); }, {a, b});
  expect_grad_ok([&] { return matmul(a, c, Transpose::No, Transpose::Yes); }, {a, c});
  expect_grad_ok([&] { return matmul(b, c, Transpose::Yes, Transpose::Yes); }, {b, c});
  auto d = random_tensor({2, 4, 3}, 11);
  expect_grad_ok([&] { return matmul(d, a, Transpose::Yes, Transpose::Yes); }, {d, a});
  expect_grad_ok([&] { return matmul(a, random_tensor({5, 4}, 12, false), Transpose::No, Transpose::Yes); }, {a});
}

TEST(GradCheck, Conv) {
  auto x = random_tensor({1, 1, 4, 4}, 13), k = random_tensor({1, 1, 3, 3}, 14);
  expect_grad_ok([&] { return sum(conv2d(x, k, std::nullopt)); }, {x, k});
  auto x2 = random_tensor({1, 2, 6, 6}, 15), k2 = random_tensor({3, 2, 3, 3}, 16), b2 = random_tensor({3}, 17);
  expect_grad_ok([&] { return conv2d(x2, k2, b2, {1, 2, Padding::Same}); }, {x2, k2, b2});
  expect_grad_ok([&] { return conv2d(x2, k2, b2, {2, 1, Padding::Valid}); }, {x2, k2, b2});
  auto k1 = random_tensor({3, 2, 1, 1}, 18);
  expect_grad_ok([&] { return conv2d(x2, k1, b2); }, {x2, k1, b2});
  auto kt = random_tensor({2, 3, 2, 2}, 19);
  expect_grad_ok([&] { return conv_transpose2d(x2, kt, b2); }, {x2, kt, b2});
}

TEST(GradCheck, PoolUpsampleNorm) {
  auto x = random_tensor({2, 2, 4, 6}, 20);
  expect_grad_ok([&] { return max_pool2d(x); }, {x});
  expect_grad_ok([&] { return bilinear_upsample(x, 2); }, {x});
  auto g = random_tensor({2}, 21), o = random_tensor({2}, 22);
  expect_grad_ok([&] { return normalize(x, NormMode::Batch, g, o, 1e-5); }, {x, g, o});
  expect_grad_ok([&] { return normalize(x, NormMode::Instance, g, o, 1e-5); }, {x, g, o});
  auto g6 = random_tensor({6}, 23), o6 = random_tensor({6}, 24);
  expect_grad_ok([&] { return normalize(x, NormMode::Layer, g6, o6, 1e-5); }, {x, g6, o6});
}

TEST(GradCheck, CorruptedGradientFails) {
  auto x = random_tensor({6}, 30);
  auto corrupted = [&] {
    return make_result<double>("corrupt", x.shape(), std::vector<double>(x.data().begin(), x.data().end()), {x},
                               [](Node<double>& o) {
                                 double* g = o.in(0).grad_data();
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += 1.01 * o.grad[i];
                               });
  };
  const auto r = grad_check(corrupted, {x}, kTol, 1);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_rel_err, 5e-3);
}

}  // namespace
}  // namespace oarseg
