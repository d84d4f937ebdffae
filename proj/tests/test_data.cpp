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
#include <cstring>
#include <set>

#include "oarseg/data.hpp"
#include "oarseg/io.hpp"

namespace oarseg {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("oarseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PatientCase blank_case(std::array<Index, 3> shape, Index channels = 1) {
  PatientCase c;
  c.id = "p0";
  c.shape = shape;
  c.channels = channels;
  c.class_names = {"a", "b"};
  c.image.assign(static_cast<std::size_t>(channels * c.voxels()), 0.0f);
  c.mask.assign(static_cast<std::size_t>(c.voxels()), 0);
  return c;
}

PatientCase random_case(std::array<Index, 3> shape, std::uint64_t seed, Index channels = 1) {
  auto c = blank_case(shape, channels);
  Rng rng(seed);
  for (auto& v : c.image) v = static_cast<float>(rng.uniform(0.5, 2.0));
  for (auto& m : c.mask) m = static_cast<std::uint8_t>(rng.below(3));
  c.spacing = {rng.uniform(1, 3), rng.uniform(1, 3), rng.uniform(1, 3)};
  return c;
}

TEST(CaseIO, RoundTripIsBitIdentical) {
  auto dir = temp_dir("roundtrip");
  auto c = random_case({3, 5, 7}, 1, 2);
  c.image[4] = -0.0f;
  c.image[5] = 1e-40f;
  write_case(c, dir / "p0");
  auto r = read_case(dir / "p0");
  EXPECT_EQ(r.id, c.id);
  EXPECT_EQ(r.shape, c.shape);
  EXPECT_EQ(r.spacing, c.spacing);
  EXPECT_EQ(r.channels, 2);
  EXPECT_EQ(r.mask, c.mask);
  ASSERT_EQ(r.image.size(), c.image.size());
  EXPECT_EQ(0, std::memcmp(r.image.data(), c.image.data(), c.image.size() * 4));
}

TEST(CaseIO, TruncatedImageNamesSizes) {
  auto dir = temp_dir("trunc");
  auto c = random_case({2, 4, 4}, 2);
  write_case(c, dir / "p0");
  fs::resize_file(dir / "p0" / "image.raw", 100);
  try {
    read_case(dir / "p0");
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("128"), std::string::npos) << msg;
    EXPECT_NE(msg.find("100"), std::string::npos) << msg;
  }
}

TEST(CaseIO, LabelBeyondRosterRejected) {
  auto dir = temp_dir("label");
  auto c = random_case({1, 4, 4}, 3);
  write_case(c, dir / "p0");
  std::vector<std::uint8_t> bad(16, 0);
  bad[3] = 3;
  write_bytes(dir / "p0" / "mask.raw", bad);
  EXPECT_THROW(read_case(dir / "p0"), ValidationError);
}

TEST(CaseIO, UnknownDtypeRejected) {
  auto dir = temp_dir("dtype");
  write_case(random_case({1, 4, 4}, 3), dir / "p0");
  auto h = read_json(dir / "p0" / "case.json");
  h["image_dtype"] = "f64le";
  write_json(dir / "p0" / "case.json", h);
  EXPECT_THROW(read_case(dir / "p0"), ValidationError);
}

TEST(Synth, DeterministicAndSeedSensitive) {
  auto a = synth_generate(2, 4, {4, 48, 48}, 7);
  auto b = synth_generate(2, 4, {4, 48, 48}, 7);
  auto c = synth_generate(2, 4, {4, 48, 48}, 8);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].spacing, b[i].spacing);
  }
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synth, ClassCoverageAudit) {
  const auto cases = synth_generate(194, 4, {4, 48, 48}, 3);
  ASSERT_EQ(cases.size(), 194u);
  std::vector<int> covered(5, 0);
  for (const auto& c : cases) {
    c.validate();
    std::vector<Index> hist(5, 0);
    for (auto m : c.mask) ++hist[m];
    for (int k = 1; k <= 4; ++k) covered[k] += static_cast<double>(hist[k]) >= 0.001 * static_cast<double>(c.voxels());
    for (double s : c.spacing) {
      EXPECT_GE(s, 1.0);
      EXPECT_LE(s, 3.0);
    }
  }
  for (int k = 1; k <= 4; ++k) EXPECT_GE(covered[k], static_cast<int>(std::ceil(0.8 * 194))) << "class " << k;
}

TEST(Synth, ExtraClassesAndErrors) {
  auto c = synth_generate(1, 6, {2, 64, 64}, 1)[0];
  EXPECT_EQ(c.class_names.size(), 6u);
  EXPECT_EQ(*std::max_element(c.mask.begin(), c.mask.end()), 6);
  EXPECT_THROW(synth_generate(1, 1, {2, 64, 64}, 1), ValidationError);
  EXPECT_THROW(synth_generate(1, 4, {2, 8, 8}, 1), ValidationError);
}

TEST(Crop, BoundingBoxOracle) {
  auto c = blank_case({10, 10, 10});
  for (Index z = 2; z < 5; ++z)
    for (Index y = 2; y < 5; ++y)
      for (Index x = 2; x < 5; ++x) {
        c.image[(z * 10 + y) * 10 + x] = static_cast<float>(z + y + x);
        c.mask[(z * 10 + y) * 10 + x] = 1;
      }
  auto r = crop_nonzero(c);
  EXPECT_EQ(r.shape, (std::array<Index, 3>{3, 3, 3}));
  EXPECT_EQ(r.offset, (std::array<Index, 3>{2, 2, 2}));
  for (Index z = 0; z < 3; ++z)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 3; ++x) {
        EXPECT_EQ(r.image[(z * 3 + y) * 3 + x], static_cast<float>(z + y + x + 6));
        EXPECT_EQ(r.mask[(z * 3 + y) * 3 + x], 1);
      }
}

TEST(Crop, NoBorderUnchangedAndAllZeroRejected) {
  auto c = random_case({3, 4, 5}, 9);
  auto r = crop_nonzero(c);
  EXPECT_EQ(r.image, c.image);
  EXPECT_EQ(r.mask, c.mask);
  EXPECT_THROW(crop_nonzero(blank_case({2, 2, 2})), ValidationError);
}

TEST(Resample, IdentitySpacing) {
  auto c = random_case({4, 6, 5}, 4);
  auto r = resample(c, c.spacing);
  EXPECT_EQ(r.shape, c.shape);
  for (std::size_t i = 0; i < c.image.size(); ++i) EXPECT_NEAR(r.image[i], c.image[i], 1e-6);
  EXPECT_EQ(r.mask, c.mask);
}

TEST(Resample, ConstantStaysConstant) {
  auto c = blank_case({5, 7, 6});
  std::fill(c.image.begin(), c.image.end(), 3.25f);
  c.spacing = {2.5, 1.3, 1.7};
  auto r = resample(c, {1.1, 2.2, 0.9});
  for (float v : r.image) ASSERT_NEAR(v, 3.25, 1e-6);
}

TEST(Resample, SplineReproducesLinearRamp) {
  std::vector<double> f;
  for (int i = 0; i < 9; ++i) f.push_back(0.7 + 0.3 * i);
  std::vector<double> pos;
  for (int i = 0; i < 18; ++i) pos.push_back((i + 0.5) * 0.5 - 0.5);  // 2x upsample
  const auto out = spline_interpolate(f, pos);
  for (std::size_t i = 0; i < pos.size(); ++i) EXPECT_NEAR(out[i], 0.7 + 0.3 * pos[i], 1e-9);
  // through resample along x
  auto c = blank_case({1, 1, 9});
  for (int x = 0; x < 9; ++x) c.image[x] = static_cast<float>(1 + 0.5 * x);
  c.spacing = {1, 1, 2};
  auto r = resample(c, {1, 1, 1});
  ASSERT_EQ(r.shape[2], 18);
  for (int i = 0; i < 18; ++i) EXPECT_NEAR(r.image[i], 1 + 0.5 * ((i + 0.5) * 0.5 - 0.5), 1e-6);
}

TEST(Resample, SplineInterpolatesSamples) {
  Rng rng(5);
  std::vector<double> f(12), pos(12);
  for (int i = 0; i < 12; ++i) {
    f[i] = rng.uniform(-1, 1);
    pos[i] = i;
  }
  const auto out = spline_interpolate(f, pos);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(out[i], f[i], 1e-12);
}

TEST(Resample, LabelSetNeverGrows) {
  auto c = random_case({3, 9, 9}, 6);
  for (auto& m : c.mask) m = m == 1 ? 2 : m;
  auto r = resample(c, {c.spacing[0] / 1.7, c.spacing[1] * 1.4, c.spacing[2] / 2.3});
  std::set<int> in(c.mask.begin(), c.mask.end()), out(r.mask.begin(), r.mask.end());
  for (int l : out) EXPECT_TRUE(in.count(l));
  EXPECT_THROW(resample(c, {0, 1, 1}), ValidationError);
  EXPECT_THROW(resample(c, {1000, 1, 1}), ValidationError);
}

TEST(MedianSpacing, LowerMedianAndSortOracle) {
  auto make = [](std::vector<double> s) {
    std::vector<PatientCase> cs;
    for (double v : s) {
      auto c = blank_case({1, 1, 1});
      c.spacing = {v, v, v};
      cs.push_back(c);
    }
    return cs;
  };
  EXPECT_EQ(median_spacing(make({1, 2, 3}))[0], 2);
  EXPECT_EQ(median_spacing(make({1, 2, 3, 4}))[0], 2);
  Rng rng(2);
  std::vector<PatientCase> cs;
  std::array<std::vector<double>, 3> cols;
  for (int i = 0; i < 11; ++i) {
    auto c = blank_case({1, 1, 1});
    for (int a = 0; a < 3; ++a) cols[a].push_back(c.spacing[a] = rng.uniform(1, 3));
    cs.push_back(c);
  }
  const auto m = median_spacing(cs);
  for (int a = 0; a < 3; ++a) {
    std::sort(cols[a].begin(), cols[a].end());
    EXPECT_EQ(m[a], cols[a][5]);
  }
}

TEST(ZScore, DefiningPropertiesAndChannels) {
  auto c = blank_case({2, 3, 3});
  std::fill(c.image.begin(), c.image.end(), 4.0f);
  for (float v : zscore(c).image) EXPECT_EQ(v, 0.0f);

  auto r = random_case({3, 8, 8}, 7, 2);
  for (std::size_t i = r.voxels(); i < r.image.size(); ++i) r.image[i] = r.image[i] * 10 + 5;
  const auto z = zscore(r);
  for (Index m = 0; m < 2; ++m) {
    double mean = 0, sq = 0, omean = 0, osq = 0;
    const Index n = r.voxels();
    for (Index i = 0; i < n; ++i) {
      mean += z.image[m * n + i];
      omean += r.image[m * n + i];
    }
    mean /= n;
    omean /= n;
    for (Index i = 0; i < n; ++i) {
      sq += std::pow(z.image[m * n + i] - mean, 2);
      osq += std::pow(r.image[m * n + i] - omean, 2);
    }
    EXPECT_NEAR(mean, 0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / n), 1, 1e-4);
    const double osd = std::sqrt(osq / n);
    for (Index i = 0; i < n; ++i) ASSERT_NEAR(z.image[m * n + i], (r.image[m * n + i] - omean) / osd, 1e-5);
  }
}

TEST(Preprocess, IdempotentOnOwnOutput) {
  auto cs = synth_generate(3, 4, {4, 40, 40}, 11);
  const auto target = median_spacing(cs);
  for (const auto& c : cs) {
    auto once = preprocess(c, target);
    auto twice = preprocess(once, target);
    ASSERT_EQ(once.shape, twice.shape);
    for (std::size_t i = 0; i < once.image.size(); ++i) ASSERT_NEAR(once.image[i], twice.image[i], 1e-6);
    EXPECT_EQ(once.mask, twice.mask);
    auto again = preprocess(c, target);
    EXPECT_EQ(again.image, once.image);
  }
}

Slice random_slice(Index h, Index w, std::uint64_t seed) {
  Slice s;
  s.height = h;
  s.width = w;
  Rng rng(seed);
  for (Index i = 0; i < h * w; ++i) {
    s.image.push_back(static_cast<float>(rng.uniform()));
    s.mask.push_back(static_cast<std::uint8_t>(rng.below(4)));
  }
  return s;
}

TEST(Augment, OffIsIdentityAndFlipIsInvolution) {
  auto s = random_slice(9, 11, 1);
  Rng rng(3);
  AugmentPolicy off{false, false, false};
  auto a = augment(s, off, rng);
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.mask, s.mask);
  AugmentPolicy zero_prob;
  zero_prob.flip = true;
  zero_prob.probability = 0.0;
  EXPECT_EQ(augment(s, zero_prob, rng).image, s.image);
  auto f = transform_slice(transform_slice(s, 0, 1, true), 0, 1, true);
  EXPECT_EQ(f.image, s.image);
  EXPECT_EQ(f.mask, s.mask);
  auto id = transform_slice(s, 0, 1, false);
  EXPECT_EQ(id.image, s.image);
}

TEST(Augment, Rotation90MatchesIndexPermutation) {
  auto s = random_slice(7, 7, 4);
  auto r = transform_slice(s, 90.0, 1.0, false);
  for (Index y = 0; y < 7; ++y)
    for (Index x = 0; x < 7; ++x) {
      // forward map (y, x) -> (6 - x, y)
      EXPECT_EQ(r.mask[(6 - x) * 7 + y], s.mask[y * 7 + x]);
      EXPECT_NEAR(r.image[(6 - x) * 7 + y], s.image[y * 7 + x], 1e-6);
    }
}

TEST(Augment, LabelsNeverInventedAndReproducible) {
  auto s = random_slice(16, 16, 5);
  for (auto& m : s.mask) m = m == 2 ? 0 : m;
  AugmentPolicy pol;
  pol.flip = true;
  pol.probability = 1.0;
  for (int t = 0; t < 20; ++t) {
    Rng a(t), b(t);
    auto x = augment(s, pol, a), y = augment(s, pol, b);
    EXPECT_EQ(x.image, y.image);
    for (auto m : x.mask) ASSERT_NE(m, 2);
  }
}

TEST(Patches, SmallCaseIsPaddedWithBackground) {
  auto c = random_case({2, 5, 6}, 8);
  for (auto& m : c.mask) m = 1;
  Rng rng(1);
  auto p = sample_patch(c, {10, 12}, rng, 0.0);
  ASSERT_EQ(p.height, 10);
  ASSERT_EQ(p.width, 12);
  Index fg = 0;
  for (auto m : p.mask) fg += m;
  EXPECT_EQ(fg, 30);
  for (Index y = 0; y < 10; ++y)
    for (Index x = 0; x < 12; ++x) {
      const bool inside = y >= 2 && y < 7 && x >= 3 && x < 9;
      EXPECT_EQ(p.mask[y * 12 + x], inside ? 1 : 0);
    }
}

TEST(Patches, ForcedForegroundAlwaysHits) {
  auto c = blank_case({3, 40, 40});
  std::fill(c.image.begin(), c.image.end(), 1.0f);
  c.mask[(1 * 40 + 33) * 40 + 5] = 2;
  PatchSampler ps(c);
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    auto p = ps.sample({8, 8}, rng, 1.0);
    ASSERT_EQ(std::count(p.mask.begin(), p.mask.end(), 2), 1);
  }
}

TEST(Patches, ForegroundRateMonteCarlo) {
  auto c = blank_case({4, 64, 64});
  std::fill(c.image.begin(), c.image.end(), 1.0f);
  for (Index z = 0; z < 4; ++z)
    for (Index y = 40; y < 48; ++y)
      for (Index x = 40; x < 48; ++x) c.mask[(z * 64 + y) * 64 + x] = 1;
  // unforced draws: origins uniform in [0, 48] per axis, a hit needs origin in [25, 47]
  const double q = (23.0 / 49.0) * (23.0 / 49.0);
  const double expected = 0.5 + 0.5 * q;
  PatchSampler ps(c);
  Rng rng(3);
  int hits = 0;
  for (int t = 0; t < 1000; ++t) {
    auto p = ps.sample({16, 16}, rng, 0.5);
    hits += std::count(p.mask.begin(), p.mask.end(), 1) > 0;
  }
  const double rate = hits / 1000.0;
  EXPECT_GE(rate, 0.5);
  EXPECT_NEAR(rate, expected, 4 * std::sqrt(expected * (1 - expected) / 1000));
}

TEST(Folds, SizesPartitionAndDeterminism) {
  std::vector<std::string> ids;
  for (int i = 0; i < 194; ++i) ids.push_back("id" + std::to_string(i));
  auto s = make_folds(ids, 5, 42);
  std::vector<int> sizes(5, 0);
  for (const auto& [id, f] : s.assignments) ++sizes[f];
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<int>{39, 39, 39, 39, 38}));
  std::set<std::string> all;
  for (int f = 0; f < 5; ++f) {
    for (const auto& id : s.fold_ids(f)) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(s.fold_ids(f).size() + s.train_ids(f).size(), 194u);
  }
  EXPECT_EQ(all.size(), 194u);
  EXPECT_EQ(make_folds(ids, 5, 42).assignments, s.assignments);
  EXPECT_NE(make_folds(ids, 5, 43).assignments, s.assignments);
  EXPECT_THROW(make_folds(ids, 1, 0), ValidationError);
  EXPECT_THROW(make_folds({"a", "b"}, 3, 0), ValidationError);
}

}  // namespace
}  // namespace oarseg
