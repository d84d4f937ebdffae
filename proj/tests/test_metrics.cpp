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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "oarseg/metrics.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {
namespace {

LabelGrid grid2d(Index h, Index w, std::vector<std::uint8_t> v) {
  LabelGrid g;
  g.shape = {1, h, w};
  g.labels = std::move(v);
  return g;
}

// --- brute-force oracles -------------------------------------------------------

std::vector<std::array<Index, 3>> oracle_boundary(const LabelGrid& g, int c) {
  std::vector<std::array<Index, 3>> out;
  const auto [D, H, W] = g.shape;
  auto in = [&](Index z, Index y, Index x) {
    return z >= 0 && z < D && y >= 0 && y < H && x >= 0 && x < W && g.labels[(z * H + y) * W + x] == c;
  };
  for (Index z = 0; z < D; ++z)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        if (!in(z, y, x)) continue;
        bool b = (H > 1 && (!in(z, y - 1, x) || !in(z, y + 1, x))) || (W > 1 && (!in(z, y, x - 1) || !in(z, y, x + 1))) ||
                 (D > 1 && (!in(z - 1, y, x) || !in(z + 1, y, x)));
        if (b) out.push_back({z, y, x});
      }
  return out;
}

double oracle_p95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = 0.95 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = lo + 1 < v.size() ? lo + 1 : lo;
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::optional<double> oracle_hd95(const LabelGrid& p, const LabelGrid& r, int c, std::array<double, 3> sp) {
  const auto bp = oracle_boundary(p, c), br = oracle_boundary(r, c);
  if (bp.empty() && br.empty()) return std::nullopt;
  if (bp.empty() || br.empty()) {
    return std::sqrt(std::pow(p.shape[0] * sp[0], 2) + std::pow(p.shape[1] * sp[1], 2) + std::pow(p.shape[2] * sp[2], 2));
  }
  auto directed = [&](const auto& a, const auto& b) {
    std::vector<double> out;
    for (const auto& u : a) {
      double best = 1e300;
      for (const auto& v : b) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += std::pow((u[k] - v[k]) * sp[k], 2);
        best = std::min(best, s);
      }
      out.push_back(std::sqrt(best));
    }
    return out;
  };
  return std::max(oracle_p95(directed(bp, br)), oracle_p95(directed(br, bp)));
}

std::optional<double> oracle_dice(const LabelGrid& p, const LabelGrid& r, int c) {
  double a = 0, b = 0, i = 0;
  for (std::size_t k = 0; k < p.labels.size(); ++k) {
    a += p.labels[k] == c;
    b += r.labels[k] == c;
    i += p.labels[k] == c && r.labels[k] == c;
  }
  if (b == 0) return std::nullopt;
  return 2 * i / (a + b);
}

LabelGrid from_bits(unsigned bits) {
  std::vector<std::uint8_t> v(9);
  for (int i = 0; i < 9; ++i) v[i] = (bits >> i) & 1;
  return grid2d(3, 3, v);
}

// --- tests ---------------------------------------------------------------------

TEST(Dice, Examples) {
  auto r = grid2d(2, 2, {1, 1, 0, 0});
  auto p = grid2d(2, 2, {0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(*dice(p, r, 1), 0.5);
  EXPECT_DOUBLE_EQ(*dice(r, r, 1), 1.0);
  auto e = grid2d(2, 2, {0, 0, 0, 0});
  EXPECT_FALSE(dice(e, e, 1));
  EXPECT_FALSE(dice(p, e, 1));
  EXPECT_DOUBLE_EQ(*dice(e, r, 1), 0.0);
  EXPECT_DOUBLE_EQ(*dice(p, e, 1, EmptyRule::Symmetric), 0.0);
  EXPECT_THROW(dice(p, grid2d(1, 4, {0, 0, 0, 0}), 1), ValidationError);
}

TEST(HD95, Examples) {
  std::vector<std::uint8_t> a(25, 0), b(25, 0);
  a[0] = 1;
  b[3 * 5 + 4] = 1;
  EXPECT_DOUBLE_EQ(*hd95(grid2d(5, 5, a), grid2d(5, 5, b), 1, {1, 1, 1}), 5.0);
  EXPECT_DOUBLE_EQ(*hd95(grid2d(5, 5, a), grid2d(5, 5, a), 1, {1, 1, 1}), 0.0);
  LabelGrid e, f;
  e.shape = f.shape = {10, 10, 10};
  e.labels.assign(1000, 0);
  f.labels.assign(1000, 0);
  f.labels[555] = 1;
  EXPECT_NEAR(*hd95(e, f, 1, {1, 1, 1}), std::sqrt(300.0), 1e-12);
  EXPECT_FALSE(hd95(e, e, 1, {1, 1, 1}));
}

TEST(Percentile, LinearRule) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.95), 9.5);
  EXPECT_DOUBLE_EQ(percentile({7}, 0.95), 7);
}

TEST(MetricOracles, ExhaustiveThreeByThree) {
  for (unsigned a = 0; a < 512; ++a) {
    const auto p = from_bits(a);
    for (unsigned b = 0; b < 512; ++b) {
      const auto r = from_bits(b);
      ASSERT_EQ(dice(p, r, 1), oracle_dice(p, r, 1)) << a << " " << b;
      ASSERT_EQ(hd95(p, r, 1, {1, 1, 1}), oracle_hd95(p, r, 1, {1, 1, 1})) << a << " " << b;
    }
  }
}

TEST(MetricOracles, AnisotropicRandom3D) {
  Rng rng(4);
  for (int t = 0; t < 300; ++t) {
    LabelGrid p, r;
    p.shape = r.shape = {static_cast<Index>(1 + rng.below(4)), static_cast<Index>(1 + rng.below(6)), static_cast<Index>(1 + rng.below(6))};
    for (Index i = 0; i < p.voxels(); ++i) {
      p.labels.push_back(static_cast<std::uint8_t>(rng.below(3)));
      r.labels.push_back(static_cast<std::uint8_t>(rng.below(3)));
    }
    const std::array<double, 3> sp{rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 3)};
    for (int c = 1; c <= 2; ++c) {
      const auto got = hd95(p, r, c, sp), want = oracle_hd95(p, r, c, sp);
      ASSERT_EQ(got.has_value(), want.has_value());
      if (got) ASSERT_NEAR(*got, *want, 1e-9);
    }
  }
}

TEST(HD95, SymmetricScaledAndRelabelInvariant) {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    LabelGrid p, r;
    p.shape = r.shape = {2, 6, 7};
    for (Index i = 0; i < p.voxels(); ++i) {
      p.labels.push_back(static_cast<std::uint8_t>(rng.below(3)));
      r.labels.push_back(static_cast<std::uint8_t>(rng.below(3)));
    }
    const std::array<double, 3> sp{1.5, 0.8, 1.1}, sp2{3.0, 1.6, 2.2};
    const auto a = hd95(p, r, 1, sp), b = hd95(r, p, 1, sp), c = hd95(p, r, 1, sp2);
    ASSERT_EQ(a, b);
    if (a) ASSERT_NEAR(*c, 2 * *a, 1e-12);
    auto q = p;
    for (auto& l : q.labels) l = l == 2 ? 3 : l;
    ASSERT_EQ(hd95(q, r, 1, sp), a);
    const auto d1 = dice(p, r, 1), d2 = dice(r, p, 1);
    if (d1 && d2) ASSERT_DOUBLE_EQ(*d1, *d2);
  }
}

std::vector<MetricEntry> paper_example() {
  return {{"m", 0, "p1", "c1", 0.8, 1.0}, {"m", 0, "p1", "c2", 0.6, 2.0},
          {"m", 0, "p2", "c1", 1.0, 3.0}, {"m", 0, "p2", "c2", 0.4, 4.0}};
}

TEST(Aggregate, HandArithmetic) {
  const auto r = aggregate(paper_example(), Metric::Dice);
  ASSERT_EQ(r.classes, (std::vector<std::string>{"c1", "c2"}));
  EXPECT_NEAR(r.per_class[0].mean, 0.9, 1e-12);
  EXPECT_NEAR(r.per_class[1].mean, 0.5, 1e-12);
  EXPECT_NEAR(r.avg.mean, 0.7, 1e-12);
  EXPECT_EQ(r.avg.std, 0.0);
  EXPECT_NEAR(aggregate(paper_example(), Metric::HD95).avg.mean, 2.5, 1e-12);
}

TEST(Aggregate, AcrossFoldsOrderInvariantAndFlags) {
  std::vector<MetricEntry> e;
  Rng rng(2);
  for (int f = 0; f < 5; ++f)
    for (int p = 0; p < 4; ++p)
      for (const char* c : {"a", "b", "c"}) {
        std::optional<double> d = rng.uniform();
        if (f == 3 && std::string(c) == "c") d.reset();
        e.push_back({"m", f, "p" + std::to_string(f * 10 + p), c, d, std::nullopt});
      }
  const auto r1 = aggregate(e, Metric::Dice);
  std::reverse(e.begin(), e.end());
  const auto r2 = aggregate(e, Metric::Dice, {"a", "b", "c"});
  EXPECT_EQ(r1.avg.mean, r2.avg.mean);
  EXPECT_EQ(r1.per_class[2].mean, r2.per_class[2].mean);
  ASSERT_EQ(r1.flagged.size(), 1u);
  EXPECT_EQ(r1.flagged[0], (std::pair<int, std::string>{3, "c"}));
  EXPECT_EQ(r1.per_class[2].n, 4);
  // oracle: Avg over folds of the per-fold class means
  double s = 0, sq = 0;
  std::vector<double> fa;
  for (int f = 0; f < 5; ++f) {
    double cs = 0;
    int cn = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      if (r1.fold_class[f][c]) {
        cs += *r1.fold_class[f][c];
        ++cn;
      }
    }
    fa.push_back(cs / cn);
    s += cs / cn;
  }
  for (double v : fa) sq += (v - s / 5) * (v - s / 5);
  EXPECT_NEAR(r1.avg.mean, s / 5, 1e-12);
  EXPECT_NEAR(r1.avg.std, std::sqrt(sq / 5), 1e-12);
}

TEST(Aggregate, ConstantEntries) {
  std::vector<MetricEntry> e;
  for (int f = 0; f < 3; ++f)
    for (int p = 0; p < 2; ++p)
      for (const char* c : {"a", "b"}) e.push_back({"m", f, "p" + std::to_string(p), c, 0.25, 7.0});
  const auto r = aggregate(e, Metric::Dice);
  EXPECT_DOUBLE_EQ(r.avg.mean, 0.25);
  EXPECT_DOUBLE_EQ(r.avg.std, 0.0);
  for (const auto& c : r.per_class) EXPECT_DOUBLE_EQ(c.std, 0.0);
}

TEST(Pairwise, SymmetricAndSelfIsOne) {
  Rng rng(3);
  PredictionSet preds;
  std::map<std::string, int> fold;
  for (const char* m : {"a", "b", "c"}) {
    for (int p = 0; p < 6; ++p) {
      LabelGrid g;
      g.shape = {1, 6, 6};
      for (int i = 0; i < 36; ++i) g.labels.push_back(static_cast<std::uint8_t>(rng.below(3)));
      preds[m]["p" + std::to_string(p)] = g;
      fold["p" + std::to_string(p)] = p % 3;
    }
  }
  preds["a_copy"] = preds["a"];
  const auto mat = pairwise_model_dice(preds, fold, {"x", "y"});
  ASSERT_EQ(mat.models.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_FALSE(mat.cells[i][i]);
    for (std::size_t j = 0; j < 4; ++j) {
      if (i == j) continue;
      EXPECT_EQ(mat.cells[i][j]->mean, mat.cells[j][i]->mean);
      EXPECT_GE(mat.cells[i][j]->mean, 0.0);
      EXPECT_LE(mat.cells[i][j]->mean, 1.0);
    }
  }
  EXPECT_DOUBLE_EQ(mat.cells[0][1]->mean, 1.0);  // a vs a_copy
  preds["b"].erase("p0");
  EXPECT_THROW(pairwise_model_dice(preds, fold, {"x", "y"}), ValidationError);
}

// Brute-force Wilcoxon: enumerate every sign vector.
double oracle_wilcoxon_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const int n = static_cast<int>(d.size());
  std::vector<double> rank(n);
  for (int i = 0; i < n; ++i) {
    double less = 0, eq = 0;
    for (int j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      eq += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (eq + 1) / 2;
  }
  double wp = 0;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0) wp += rank[i];
  std::uint64_t lo = 0, hi = 0;
  for (std::uint64_t s = 0; s < (1ull << n); ++s) {
    double w = 0;
    for (int i = 0; i < n; ++i)
      if (s >> i & 1) w += rank[i];
    lo += w <= wp;
    hi += w >= wp;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(lo, hi)) / std::ldexp(1.0, n));
}

TEST(Wilcoxon, Examples) {
  auto r = wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}, WilcoxonMode::Exact);
  EXPECT_EQ(r.statistic, 0);
  EXPECT_DOUBLE_EQ(r.p_two_sided, 2.0 / 32.0);
  auto same = wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(same.degenerate);
  EXPECT_EQ(same.p_two_sided, 1.0);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1}), ValidationError);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2, 3}, {0, 0, 0}), ValidationError);
}

TEST(Wilcoxon, ExactMatchesEnumeration) {
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const int n = 5 + static_cast<int>(rng.below(8));
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) {
      // coarse values produce ties and zero differences
      x.push_back(std::round(rng.uniform(0, 6)) / 2);
      y.push_back(std::round(rng.uniform(0, 6)) / 2);
    }
    int nz = 0;
    for (int i = 0; i < n; ++i) nz += x[i] != y[i];
    if (nz < 5) continue;
    ASSERT_EQ(wilcoxon_signed_rank(x, y, WilcoxonMode::Exact).p_two_sided, oracle_wilcoxon_p(x, y)) << t;
  }
}

TEST(Wilcoxon, ApproxAgreesWithExactAtTwenty) {
  Rng rng(13);
  std::vector<double> x, y;
  for (int i = 0; i < 200; ++i) {
    x.push_back(rng.normal(0.1, 1));
    y.push_back(rng.normal(0, 1));
  }
  std::vector<double> x20(x.begin(), x.begin() + 20), y20(y.begin(), y.begin() + 20);
  const auto e = wilcoxon_signed_rank(x20, y20, WilcoxonMode::Exact);
  const auto a = wilcoxon_signed_rank(x20, y20, WilcoxonMode::Approx);
  EXPECT_NEAR(e.p_two_sided, a.p_two_sided, 0.01);
  EXPECT_FALSE(wilcoxon_signed_rank(x, y).exact);
  EXPECT_THROW(wilcoxon_signed_rank(x, y, WilcoxonMode::Exact), ValidationError);
}

TEST(MedianFold, Rules) {
  EXPECT_EQ(median_fold_select({{0.70, 0.80, 0.75, 0.72, 0.78}}), 2);
  EXPECT_EQ(median_fold_select({{0.5}}), 0);
  EXPECT_EQ(median_fold_select({{0.6, 0.6, 0.6, 0.6, 0.6}}), 0);
  EXPECT_EQ(median_fold_select({{0.1, 0.9, 0.5, 0.3}, {0.3, 0.9, 0.5, 0.1}}), 0);
}

TEST(MetricsCsv, RoundTrip) {
  auto p = std::filesystem::temp_directory_path() / "oarseg_metrics_rt.csv";
  auto e = paper_example();
  e[1].hd95_mm.reset();
  e[2].dice = 1.0 / 3.0;
  write_metrics_csv(p, e);
  const auto r = read_metrics_csv(p);
  ASSERT_EQ(r.size(), e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_EQ(r[i].dice, e[i].dice);
    EXPECT_EQ(r[i].hd95_mm, e[i].hd95_mm);
    EXPECT_EQ(r[i].patient, e[i].patient);
  }
}

}  // namespace
}  // namespace oarseg
