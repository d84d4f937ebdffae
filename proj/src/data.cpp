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


#include "oarseg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "oarseg/io.hpp"

namespace oarseg {

namespace fs = std::filesystem;
using nlohmann::json;

void PatientCase::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < 1) throw ValidationError("case " + id + ": extents must be positive");
    if (!(spacing[a] > 0)) throw ValidationError("case " + id + ": spacing must be positive");
  }
  if (channels < 1) throw ValidationError("case " + id + ": channels must be >= 1");
  if (static_cast<Index>(image.size()) != channels * voxels()) {
    throw ValidationError("case " + id + ": image holds " + std::to_string(image.size()) + " values, expected " +
                          std::to_string(channels * voxels()));
  }
  if (static_cast<Index>(mask.size()) != voxels()) {
    throw ValidationError("case " + id + ": mask holds " + std::to_string(mask.size()) + " voxels, expected " +
                          std::to_string(voxels()));
  }
  const auto c = static_cast<std::uint8_t>(class_names.size());
  for (auto l : mask) {
    if (l > c) throw ValidationError("case " + id + ": label " + std::to_string(l) + " exceeds class count " + std::to_string(c));
  }
}

void write_case(const PatientCase& c, const fs::path& dir) {
  c.validate();
  fs::create_directories(dir);
  json h = {{"id", c.id},
            {"shape", c.shape},
            {"channels", c.channels},
            {"spacing_mm", c.spacing},
            {"classes", c.class_names},
            {"image_dtype", "f32le"},
            {"mask_dtype", "u8"},
            {"offset", c.offset}};
  write_text(dir / "case.json", h.dump(2) + "\n");
  write_f32le(dir / "image.raw", c.image);
  write_bytes(dir / "mask.raw", c.mask);
}

PatientCase read_case(const fs::path& dir) {
  const json h = read_json(dir / "case.json");
  PatientCase c;
  try {
    c.id = h.at("id").get<std::string>();
    c.shape = h.at("shape").get<std::array<Index, 3>>();
    c.channels = h.value("channels", Index{1});
    c.spacing = h.at("spacing_mm").get<std::array<double, 3>>();
    c.class_names = h.at("classes").get<std::vector<std::string>>();
    if (h.contains("offset")) c.offset = h.at("offset").get<std::array<Index, 3>>();
    if (h.value("image_dtype", std::string("f32le")) != "f32le") {
      throw ValidationError("unknown image_dtype '" + h.at("image_dtype").get<std::string>() + "'");
    }
    if (h.value("mask_dtype", std::string("u8")) != "u8") {
      throw ValidationError("unknown mask_dtype '" + h.at("mask_dtype").get<std::string>() + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(dir.string() + "/case.json: " + e.what());
  }
  for (int a = 0; a < 3; ++a) {
    if (c.shape[a] < 1) throw ValidationError(dir.string() + ": extents must be positive");
  }
  c.image = read_f32le(dir / "image.raw", c.channels * c.voxels());
  c.mask = read_bytes(dir / "mask.raw", c.voxels());
  c.validate();
  return c;
}

void write_dataset(const std::vector<PatientCase>& cases, const fs::path& root) {
  fs::create_directories(root);
  json ids = json::array();
  for (const auto& c : cases) {
    write_case(c, root / c.id);
    ids.push_back(c.id);
  }
  json idx = {{"cases", ids}, {"classes", cases.empty() ? std::vector<std::string>{} : cases.front().class_names}};
  write_text(root / "dataset.json", idx.dump(2) + "\n");
}

Dataset read_dataset_index(const fs::path& root) {
  const json idx = read_json(root / "dataset.json");
  Dataset d;
  try {
    d.ids = idx.at("cases").get<std::vector<std::string>>();
    d.class_names = idx.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError((root / "dataset.json").string() + ": " + e.what());
  }
  return d;
}

std::vector<PatientCase> read_dataset(const fs::path& root) {
  const auto idx = read_dataset_index(root);
  std::vector<PatientCase> out;
  for (const auto& id : idx.ids) {
    out.push_back(read_case(root / id));
    if (out.back().class_names != idx.class_names) throw ValidationError("case " + id + ": class roster differs from dataset.json");
  }
  return out;
}

std::vector<std::string> default_class_names(int classes) {
  static const std::vector<std::string> roster{"bladder", "bowel", "rectum", "sigmoid"};
  std::vector<std::string> out;
  for (int k = 0; k < classes; ++k) {
    out.push_back(k < static_cast<int>(roster.size()) ? roster[k] : "structure" + std::to_string(k + 1));
  }
  return out;
}

// --- phantoms ----------------------------------------------------------------

namespace {

struct Tube {
  double u, v, r;  // centre (normalized row, col) at w = 0.5 and radius
  double amp_v, phase;  // sinusoidal drift of the column along depth
  std::uint8_t label;
  bool contains(double uu, double vv, double w) const {
    const double cv = v + amp_v * std::sin(2 * M_PI * w + phase);
    return (uu - u) * (uu - u) + (vv - cv) * (vv - cv) <= r * r;
  }
};

}  // namespace

std::vector<PatientCase> synth_generate(int n_patients, int classes, std::array<Index, 3> extent, std::uint64_t seed) {
  if (classes < 2) throw ValidationError("synthetic phantoms need at least 2 classes");
  if (classes > 250) throw ValidationError("too many classes for 8-bit masks");
  if (n_patients < 1) throw ValidationError("need at least one patient");
  if (extent[0] < 1 || extent[1] < 24 || extent[2] < 24) {
    throw ValidationError("extent too small to place all structures (need D >= 1, H,W >= 24)");
  }
  const auto names = default_class_names(classes);
  const Index D = extent[0], H = extent[1], W = extent[2];
  std::vector<PatientCase> out;
  for (int p = 0; p < n_patients; ++p) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p)));
    PatientCase c;
    c.id = "case_" + std::string(p < 100 ? (p < 10 ? "00" : "0") : "") + std::to_string(p);
    c.shape = extent;
    c.class_names = names;
    for (auto& s : c.spacing) s = rng.uniform(1.0, 3.0);

    const double body_ru = 0.45 * rng.uniform(0.95, 1.05), body_rv = 0.47 * rng.uniform(0.95, 1.05);
    // bladder ellipsoid
    const double bu = 0.42 + rng.uniform(-0.04, 0.04), bv = 0.5 + rng.uniform(-0.05, 0.05);
    const double bru = 0.15 * rng.uniform(0.85, 1.15), brv = 0.19 * rng.uniform(0.85, 1.15);
    // rectum tube touching the bladder's posterior wall, sigmoid beside the rectum
    const double rr = 0.075 * rng.uniform(0.9, 1.1);
    Tube rectum{bu + bru + 0.95 * rr, bv + rng.uniform(-0.03, 0.03), rr, 0.02, rng.uniform(0, 2 * M_PI), 3};
    const double sr = 0.06 * rng.uniform(0.9, 1.1);
    Tube sigmoid{rectum.u - 0.02, rectum.v + rr + 0.95 * sr + 0.03, sr, 0.03, rng.uniform(0, 2 * M_PI), 4};
    // bowel: three loops above the bladder joined by a bar
    std::vector<Tube> bowel;
    for (int b = 0; b < 3; ++b) {
      bowel.push_back({0.2 + rng.uniform(-0.03, 0.03), 0.3 + 0.2 * b + rng.uniform(-0.03, 0.03),
                       0.05 * rng.uniform(0.9, 1.1), 0.04, rng.uniform(0, 2 * M_PI), 2});
    }
    const double bar_u = 0.2 + rng.uniform(-0.02, 0.02), bar_h = 0.025;
    std::vector<Tube> extra;
    for (int k = 5; k <= classes; ++k) {
      extra.push_back({rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.8), 0.05, 0.02, rng.uniform(0, 2 * M_PI),
                       static_cast<std::uint8_t>(k)});
    }

    std::vector<double> level(static_cast<std::size_t>(classes) + 1);
    const double gain = rng.uniform(0.8, 1.2), shift = rng.uniform(-0.1, 0.1);
    const double base[] = {0.3, 1.0, 0.75, 0.55, 0.42};
    for (int k = 0; k <= classes; ++k) {
      const double b = k < 5 ? base[k] : 0.9 - 0.07 * (k - 4);
      level[k] = gain * (b + (k ? rng.uniform(-0.06, 0.06) : 0.0)) + shift;
    }
    const double noise = 0.05;

    c.image.assign(static_cast<std::size_t>(c.voxels()), 0.0f);
    c.mask.assign(static_cast<std::size_t>(c.voxels()), 0);
    for (Index z = 0; z < D; ++z) {
      const double w = (static_cast<double>(z) + 0.5) / static_cast<double>(D);
      const double bladder_scale = std::sqrt(std::max(0.0, 1.0 - std::pow((w - 0.5) / 0.75, 2)));
      for (Index y = 0; y < H; ++y) {
        const double u = (static_cast<double>(y) + 0.5) / static_cast<double>(H);
        for (Index x = 0; x < W; ++x) {
          const double v = (static_cast<double>(x) + 0.5) / static_cast<double>(W);
          const Index i = (z * H + y) * W + x;
          const double e = std::pow((u - 0.5) / body_ru, 2) + std::pow((v - 0.5) / body_rv, 2);
          const double n = rng.normal();
          if (e > 1.0) continue;
          int lab = 0;
          bool in_bowel = u >= bar_u - bar_h && u <= bar_u + bar_h && v >= bowel[0].v && v <= bowel[2].v;
          for (const auto& t : bowel) in_bowel = in_bowel || t.contains(u, v, w);
          if (in_bowel && classes >= 2) lab = 2;
          if (classes >= 4 && sigmoid.contains(u, v, w)) lab = 4;
          if (classes >= 3 && rectum.contains(u, v, w)) lab = 3;
          const double bd = std::pow((u - bu) / (bru * bladder_scale + 1e-9), 2) + std::pow((v - bv) / (brv * bladder_scale + 1e-9), 2);
          if (bd <= 1.0) lab = 1;
          for (const auto& t : extra) {
            if (t.contains(u, v, w)) lab = t.label;
          }
          c.mask[i] = static_cast<std::uint8_t>(lab);
          c.image[i] = static_cast<float>(level[lab] + noise * n);
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

// --- preprocessing -----------------------------------------------------------

PatientCase crop_nonzero(const PatientCase& c) {
  c.validate();
  const Index D = c.shape[0], H = c.shape[1], W = c.shape[2];
  std::array<Index, 3> lo{D, H, W}, hi{-1, -1, -1};
  for (Index m = 0; m < c.channels; ++m) {
    for (Index z = 0; z < D; ++z)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) {
          if (c.image[((m * D + z) * H + y) * W + x] == 0.0f) continue;
          const Index p[3] = {z, y, x};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
          }
        }
  }
  if (hi[0] < 0) throw ValidationError("case " + c.id + ": image is all zero, nothing to crop to");
  PatientCase r = c;
  for (int a = 0; a < 3; ++a) {
    r.shape[a] = hi[a] - lo[a] + 1;
    r.offset[a] = c.offset[a] + lo[a];
  }
  r.image.assign(static_cast<std::size_t>(r.channels * r.voxels()), 0.0f);
  r.mask.assign(static_cast<std::size_t>(r.voxels()), 0);
  for (Index z = 0; z < r.shape[0]; ++z)
    for (Index y = 0; y < r.shape[1]; ++y)
      for (Index x = 0; x < r.shape[2]; ++x) {
        const Index src = ((z + lo[0]) * H + (y + lo[1])) * W + (x + lo[2]);
        const Index dst = (z * r.shape[1] + y) * r.shape[2] + x;
        r.mask[dst] = c.mask[src];
        for (Index m = 0; m < c.channels; ++m) r.image[m * r.voxels() + dst] = c.image[m * c.voxels() + src];
      }
  return r;
}

namespace {

double bspline3(double t) {
  t = std::abs(t);
  if (t < 1) return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
  if (t < 2) return (2 - t) * (2 - t) * (2 - t) / 6.0;
  return 0.0;
}

// Interpolating cubic spline coefficients with the point-symmetric boundary
// c[-k] = 2 c[0] - c[k] (and likewise at the far end), which pins c at both
// end samples and makes the interior a tridiagonal system.
std::vector<double> spline_coefficients(const std::vector<double>& f) {
  const std::size_t n = f.size();
  std::vector<double> c = f;
  if (n <= 2) return c;
  // rows 1..n-2: c[i-1] + 4c[i] + c[i+1] = 6 f[i], with c[0], c[n-1] known
  const std::size_t m = n - 2;
  std::vector<double> diag(m, 4.0), rhs(m);
  for (std::size_t i = 0; i < m; ++i) rhs[i] = 6.0 * f[i + 1];
  rhs[0] -= f[0];
  rhs[m - 1] -= f[n - 1];
  for (std::size_t i = 1; i < m; ++i) {
    const double w = 1.0 / diag[i - 1];
    diag[i] -= w;
    rhs[i] -= w * rhs[i - 1];
  }
  c[m] = rhs[m - 1] / diag[m - 1];
  for (std::size_t i = m - 1; i-- > 0;) c[i + 1] = (rhs[i] - c[i + 2]) / diag[i];
  return c;
}

double coefficient_at(const std::vector<double>& c, Index k) {
  const Index n = static_cast<Index>(c.size());
  if (n == 1) return c[0];
  if (k < 0) return 2 * c[0] - coefficient_at(c, -k);
  if (k > n - 1) return 2 * c[n - 1] - coefficient_at(c, 2 * (n - 1) - k);
  return c[k];
}

// Source positions for a grid-fitted resize n -> n_out (cell centres aligned).
std::vector<double> resize_positions(Index n, Index n_out) {
  std::vector<double> pos(static_cast<std::size_t>(n_out));
  const double f = static_cast<double>(n) / static_cast<double>(n_out);
  for (Index i = 0; i < n_out; ++i) pos[i] = (static_cast<double>(i) + 0.5) * f - 0.5;
  return pos;
}

}  // namespace

std::vector<double> spline_interpolate(const std::vector<double>& f, const std::vector<double>& positions) {
  if (f.empty()) throw ValidationError("spline of an empty signal");
  const auto c = spline_coefficients(f);
  std::vector<double> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double x = positions[i];
    const Index k0 = static_cast<Index>(std::floor(x));
    double s = 0;
    for (Index k = k0 - 1; k <= k0 + 2; ++k) s += coefficient_at(c, k) * bspline3(x - static_cast<double>(k));
    out[i] = s;
  }
  return out;
}

PatientCase resample(const PatientCase& c, std::array<double, 3> target) {
  std::array<Index, 3> out_shape{};
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0)) throw ValidationError("target spacing must be positive");
    out_shape[a] = static_cast<Index>(std::llround(static_cast<double>(c.shape[a]) * c.spacing[a] / target[a]));
    if (out_shape[a] < 1) throw ValidationError("case " + c.id + ": resampling yields an empty axis");
  }
  return resample_to_shape(c, out_shape, target);
}

PatientCase resample_to_shape(const PatientCase& c, std::array<Index, 3> out_shape, std::array<double, 3> spacing) {
  c.validate();
  for (int a = 0; a < 3; ++a)
    if (out_shape[a] < 1) throw ValidationError("case " + c.id + ": resampling yields an empty axis");
  // image: separable spline passes z, y, x in double precision
  std::array<Index, 3> cur = c.shape;
  std::vector<double> vol(c.image.begin(), c.image.end());
  for (int a = 0; a < 3; ++a) {
    if (out_shape[a] == cur[a]) continue;
    const auto pos = resize_positions(cur[a], out_shape[a]);
    std::array<Index, 3> nxt = cur;
    nxt[a] = out_shape[a];
    const Index outer = c.channels * (a == 0 ? 1 : (a == 1 ? cur[0] : cur[0] * cur[1]));
    const Index inner = a == 0 ? cur[1] * cur[2] : (a == 1 ? cur[2] : 1);
    std::vector<double> res(static_cast<std::size_t>(outer * nxt[a] * inner));
    std::vector<double> line(static_cast<std::size_t>(cur[a]));
    for (Index o = 0; o < outer; ++o)
      for (Index in = 0; in < inner; ++in) {
        for (Index i = 0; i < cur[a]; ++i) line[i] = vol[(o * cur[a] + i) * inner + in];
        const auto r = spline_interpolate(line, pos);
        for (Index i = 0; i < nxt[a]; ++i) res[(o * nxt[a] + i) * inner + in] = r[i];
      }
    vol = std::move(res);
    cur = nxt;
  }
  PatientCase r = c;
  r.shape = out_shape;
  r.spacing = spacing;
  r.image.assign(vol.begin(), vol.end());
  // mask: nearest neighbour at the same positions
  std::array<std::vector<Index>, 3> nn;
  for (int a = 0; a < 3; ++a) {
    const auto pos = resize_positions(c.shape[a], out_shape[a]);
    for (double p : pos) nn[a].push_back(std::clamp<Index>(static_cast<Index>(std::floor(p + 0.5)), 0, c.shape[a] - 1));
  }
  r.mask.assign(static_cast<std::size_t>(r.voxels()), 0);
  for (Index z = 0; z < out_shape[0]; ++z)
    for (Index y = 0; y < out_shape[1]; ++y)
      for (Index x = 0; x < out_shape[2]; ++x) {
        r.mask[(z * out_shape[1] + y) * out_shape[2] + x] = c.mask[(nn[0][z] * c.shape[1] + nn[1][y]) * c.shape[2] + nn[2][x]];
      }
  return r;
}

std::array<double, 3> median_spacing(const std::vector<PatientCase>& cases) {
  if (cases.empty()) throw ValidationError("median spacing of an empty dataset");
  std::array<double, 3> out{};
  for (int a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& c : cases) v.push_back(c.spacing[a]);
    std::sort(v.begin(), v.end());
    out[a] = v[(v.size() - 1) / 2];
  }
  return out;
}

PatientCase zscore(const PatientCase& c) {
  PatientCase r = c;
  const Index n = c.voxels();
  for (Index m = 0; m < c.channels; ++m) {
    const float* src = c.image.data() + m * n;
    double mean = 0;
    for (Index i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (Index i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
    for (Index i = 0; i < n; ++i) r.image[m * n + i] = static_cast<float>((src[i] - mean) / sd);
  }
  return r;
}

PatientCase preprocess(const PatientCase& c, std::array<double, 3> target) {
  return zscore(resample(crop_nonzero(c), target));
}

// --- slices, augmentation, patches --------------------------------------------

Slice extract_slice(const PatientCase& c, Index z) {
  if (z < 0 || z >= c.shape[0]) throw ValidationError("slice index out of range");
  Slice s;
  s.channels = c.channels;
  s.height = c.shape[1];
  s.width = c.shape[2];
  const Index px = c.slice_pixels();
  s.image.resize(static_cast<std::size_t>(c.channels * px));
  for (Index m = 0; m < c.channels; ++m) {
    std::copy_n(c.image.begin() + m * c.voxels() + z * px, px, s.image.begin() + m * px);
  }
  s.mask.assign(c.mask.begin() + z * px, c.mask.begin() + (z + 1) * px);
  return s;
}

Slice transform_slice(const Slice& s, double angle_deg, double scale, bool flip) {
  if (!(scale > 0)) throw ValidationError("scale must be positive");
  const Index H = s.height, W = s.width, px = H * W;
  const double cr = 0.5 * static_cast<double>(H - 1), cc = 0.5 * static_cast<double>(W - 1);
  const double th = angle_deg * M_PI / 180.0, co = std::cos(th), si = std::sin(th);
  Slice o = s;
  for (Index r = 0; r < H; ++r)
    for (Index c = 0; c < W; ++c) {
      const double col = flip ? static_cast<double>(W - 1 - c) : static_cast<double>(c);
      const double dr = static_cast<double>(r) - cr, dc = col - cc;
      // inverse of the forward rotation [co -si; si co]
      const double sr = (co * dr + si * dc) / scale + cr;
      const double sc = (-si * dr + co * dc) / scale + cc;
      const Index nr = static_cast<Index>(std::floor(sr + 0.5)), nc = static_cast<Index>(std::floor(sc + 0.5));
      o.mask[r * W + c] = (nr >= 0 && nr < H && nc >= 0 && nc < W) ? s.mask[nr * W + nc] : 0;
      const Index r0 = static_cast<Index>(std::floor(sr)), c0 = static_cast<Index>(std::floor(sc));
      const double fr = sr - static_cast<double>(r0), fc = sc - static_cast<double>(c0);
      for (Index m = 0; m < s.channels; ++m) {
        const float* img = s.image.data() + m * px;
        auto at = [&](Index y, Index x) -> double {
          return (y >= 0 && y < H && x >= 0 && x < W) ? static_cast<double>(img[y * W + x]) : 0.0;
        };
        double v = 0;
        if ((1 - fr) * (1 - fc) != 0) v += (1 - fr) * (1 - fc) * at(r0, c0);
        if ((1 - fr) * fc != 0) v += (1 - fr) * fc * at(r0, c0 + 1);
        if (fr * (1 - fc) != 0) v += fr * (1 - fc) * at(r0 + 1, c0);
        if (fr * fc != 0) v += fr * fc * at(r0 + 1, c0 + 1);
        o.image[m * px + r * W + c] = static_cast<float>(v);
      }
    }
  return o;
}

Slice augment(const Slice& s, const AugmentPolicy& policy, Rng& rng) {
  double angle = 0, scale = 1;
  bool flip = false;
  if (policy.rotate && rng.bernoulli(policy.probability)) {
    angle = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
  }
  if (policy.scale && rng.bernoulli(policy.probability)) scale = rng.uniform(policy.scale_min, policy.scale_max);
  if (policy.flip && rng.bernoulli(policy.probability)) flip = true;
  if (angle == 0 && scale == 1 && !flip) return s;
  return transform_slice(s, angle, scale, flip);
}

PatchSampler::PatchSampler(const PatientCase& c) : case_(&c) {
  for (Index i = 0; i < c.voxels(); ++i) {
    if (c.mask[i] > 0) foreground_.push_back(i);
  }
}

Slice PatchSampler::crop_at(Index z, Index cy, Index cx, std::array<Index, 2> patch) const {
  const auto& c = *case_;
  const Index H = c.shape[1], W = c.shape[2], ph = patch[0], pw = patch[1];
  const Index oy = H >= ph ? std::clamp<Index>(cy - ph / 2, 0, H - ph) : -((ph - H) / 2);
  const Index ox = W >= pw ? std::clamp<Index>(cx - pw / 2, 0, W - pw) : -((pw - W) / 2);
  Slice s;
  s.channels = c.channels;
  s.height = ph;
  s.width = pw;
  s.image.assign(static_cast<std::size_t>(c.channels * ph * pw), 0.0f);
  s.mask.assign(static_cast<std::size_t>(ph * pw), 0);
  for (Index y = 0; y < ph; ++y) {
    const Index sy = oy + y;
    if (sy < 0 || sy >= H) continue;
    for (Index x = 0; x < pw; ++x) {
      const Index sx = ox + x;
      if (sx < 0 || sx >= W) continue;
      const Index src = (z * H + sy) * W + sx;
      s.mask[y * pw + x] = c.mask[src];
      for (Index m = 0; m < c.channels; ++m) s.image[(m * ph + y) * pw + x] = c.image[m * c.voxels() + src];
    }
  }
  return s;
}

Slice PatchSampler::sample(std::array<Index, 2> patch, Rng& rng, double fg_fraction) const {
  if (fg_fraction < 0 || fg_fraction > 1) throw ValidationError("fg_fraction must lie in [0, 1]");
  const auto& c = *case_;
  const Index H = c.shape[1], W = c.shape[2];
  if (!foreground_.empty() && rng.uniform() < fg_fraction) {
    const Index i = foreground_[rng.below(foreground_.size())];
    return crop_at(i / (H * W), (i / W) % H, i % W, patch);
  }
  const Index z = static_cast<Index>(rng.below(static_cast<std::uint64_t>(c.shape[0])));
  const Index cy = H > patch[0] ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(H - patch[0] + 1))) + patch[0] / 2 : 0;
  const Index cx = W > patch[1] ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(W - patch[1] + 1))) + patch[1] / 2 : 0;
  return crop_at(z, cy, cx, patch);
}

Slice sample_patch(const PatientCase& c, std::array<Index, 2> patch, Rng& rng, double fg_fraction) {
  return PatchSampler(c).sample(patch, rng, fg_fraction);
}

// --- folds -----------------------------------------------------------------

std::vector<std::string> FoldSplit::fold_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldSplit::train_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments)
    if (f != fold) out.push_back(id);
  return out;
}

FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("need at least 2 folds");
  if (static_cast<std::size_t>(k) > ids.size()) throw ValidationError("more folds than cases");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) throw ValidationError("duplicate case id");
  Rng rng(derive_seed(seed, "folds"));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  FoldSplit s;
  s.k = k;
  s.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) s.assignments[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return s;
}

}  // namespace oarseg
