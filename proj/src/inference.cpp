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


#include "oarseg/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "oarseg/io.hpp"

namespace oarseg {

std::vector<Index> window_layout(Index extent, Index patch, double overlap) {
  if (overlap < 0 || overlap >= 1) throw ValidationError("overlap must lie in [0, 1)");
  if (extent < 1 || patch < 1) throw ValidationError("extent and patch must be positive");
  if (extent <= patch) return {0};
  const Index stride = std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(patch) * (1 - overlap))));
  std::vector<Index> out;
  for (Index o = 0;; o += stride) {
    if (o + patch <= extent) {
      out.push_back(o);
      continue;
    }
    if (extent - patch > out.back()) out.push_back(extent - patch);
    break;
  }
  return out;
}

int worker_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("OARSEG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(1, n);
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads; exceptions are rethrown
// for the lowest failing index.
void parallel_for(Index n, int workers, const std::function<void(Index)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<Index>(workers, n); ++w) {
    pool.emplace_back([&] {
      for (Index i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> accumulate_windows(const ProbFn& fn, const PatientCase& c, Index classes, const SlidingWindow& sw) {
  c.validate();
  if (classes < 2) throw ValidationError("need at least 2 classes");
  const Index D = c.shape[0], H = c.shape[1], W = c.shape[2], M = c.channels;
  const Index ph = sw.patch[0], pw = sw.patch[1];
  const auto ys = window_layout(H, ph, sw.overlap), xs = window_layout(W, pw, sw.overlap);
  std::vector<std::pair<Index, Index>> windows;
  for (Index y : ys)
    for (Index x : xs) windows.push_back({y, x});

  std::vector<double> mean(static_cast<std::size_t>(classes * c.voxels()), 0.0);
  parallel_for(D, worker_count(sw.workers), [&](Index z) {
    NoGradGuard ng;
    const Index px = H * W;
    std::vector<double> acc(static_cast<std::size_t>(classes * px), 0.0);
    std::vector<int> cover(static_cast<std::size_t>(px), 0);
    for (std::size_t w0 = 0; w0 < windows.size(); w0 += static_cast<std::size_t>(sw.batch)) {
      const std::size_t nb = std::min(windows.size() - w0, static_cast<std::size_t>(sw.batch));
      std::vector<float> in(nb * M * ph * pw, 0.0f);
      for (std::size_t b = 0; b < nb; ++b) {
        const auto [oy, ox] = windows[w0 + b];
        for (Index m = 0; m < M; ++m)
          for (Index y = 0; y < ph && oy + y < H; ++y)
            for (Index x = 0; x < pw && ox + x < W; ++x) {
              in[((b * M + m) * ph + y) * pw + x] = c.image[((m * D + z) * H + oy + y) * W + ox + x];
            }
      }
      const auto out = fn(Tensor<float>::from({static_cast<Index>(nb), M, ph, pw}, std::move(in)));
      if (out.shape() != Shape{static_cast<Index>(nb), classes, ph, pw}) {
        throw DimensionError("window model returned " + to_string(out.shape()));
      }
      for (std::size_t b = 0; b < nb; ++b) {
        const auto [oy, ox] = windows[w0 + b];
        for (Index y = 0; y < ph && oy + y < H; ++y)
          for (Index x = 0; x < pw && ox + x < W; ++x) {
            const Index p = (oy + y) * W + ox + x;
            ++cover[p];
            for (Index k = 0; k < classes; ++k) acc[k * px + p] += out[((b * classes + k) * ph + y) * pw + x];
          }
      }
    }
    for (Index k = 0; k < classes; ++k)
      for (Index p = 0; p < px; ++p) {
        mean[(k * D + z) * px + p] = acc[k * px + p] / cover[p];
      }
  });
  return mean;
}

ProbabilityVolume predict_volume(const ProbFn& fn, const PatientCase& c, Index classes, const SlidingWindow& sw) {
  const auto mean = accumulate_windows(fn, c, classes, sw);
  ProbabilityVolume v;
  v.id = c.id;
  v.classes = classes;
  v.shape = c.shape;
  v.spacing = c.spacing;
  v.class_names = c.class_names;
  v.probs.assign(mean.begin(), mean.end());
  return v;
}

ProbabilityVolume restore_original_grid(const ProbabilityVolume& v, const PatientCase& original) {
  const PatientCase box = crop_nonzero(original);
  PatientCase p;
  p.id = v.id;
  p.channels = v.classes;
  p.shape = v.shape;
  p.spacing = v.spacing;
  p.class_names = v.class_names;
  p.image = v.probs;
  p.mask.assign(static_cast<std::size_t>(v.voxels()), 0);
  const PatientCase r = resample_to_shape(p, box.shape, original.spacing);
  const Index C = v.classes, n = r.voxels(), full = original.voxels();
  ProbabilityVolume out;
  out.id = original.id;
  out.classes = C;
  out.shape = original.shape;
  out.spacing = original.spacing;
  out.class_names = v.class_names;
  out.probs.assign(static_cast<std::size_t>(C * full), 0.0f);
  for (Index i = 0; i < full; ++i) out.probs[i] = 1.0f;
  std::array<Index, 3> lo{};
  for (int a = 0; a < 3; ++a) lo[a] = box.offset[a] - original.offset[a];
  const auto& s = box.shape;
  const auto& o = original.shape;
  std::vector<double> q(static_cast<std::size_t>(C));
  for (Index z = 0; z < s[0]; ++z)
    for (Index y = 0; y < s[1]; ++y)
      for (Index x = 0; x < s[2]; ++x) {
        const Index src = (z * s[1] + y) * s[2] + x;
        const Index dst = ((z + lo[0]) * o[1] + (y + lo[1])) * o[2] + (x + lo[2]);
        // spline overshoot is clipped, then the voxel is put back on the simplex
        double total = 0;
        for (Index k = 0; k < C; ++k) total += q[k] = std::max(0.0, static_cast<double>(r.image[k * n + src]));
        if (!(total > 0)) {
          std::fill(q.begin(), q.end(), 0.0);
          q[0] = total = 1.0;
        }
        for (Index k = 0; k < C; ++k) out.probs[k * full + dst] = static_cast<float>(q[k] / total);
      }
  return out;
}

ProbabilityVolume predict_original(const ProbFn& fn, const PatientCase& original, Index classes, const SlidingWindow& sw,
                                   std::array<double, 3> target_spacing) {
  return restore_original_grid(predict_volume(fn, preprocess(original, target_spacing), classes, sw), original);
}

ProbabilityVolume ensemble_average(const std::vector<ProbabilityVolume>& members, std::vector<double> weights) {
  if (members.empty()) throw ValidationError("ensemble needs at least one member");
  if (weights.empty()) weights.assign(members.size(), 1.0);
  if (weights.size() != members.size()) throw ValidationError("ensemble weights do not match the member count");
  double total = 0;
  for (double w : weights) {
    if (!(w > 0) || !std::isfinite(w)) throw ValidationError("ensemble weights must be positive");
    total += w;
  }
  const auto& ref = members.front();
  for (const auto& m : members) {
    if (m.shape != ref.shape || m.classes != ref.classes || m.class_names != ref.class_names ||
        m.probs.size() != ref.probs.size()) {
      throw ValidationError("ensemble member " + m.id + " is not aligned with " + ref.id);
    }
  }
  ProbabilityVolume out = ref;
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < members.size(); ++j) s += weights[j] / total * members[j].probs[i];
    out.probs[i] = static_cast<float>(s);
  }
  return out;
}

std::vector<std::vector<int>> enumerate_subsets(int n, int min_size) {
  if (min_size < 1) throw ValidationError("min_size must be >= 1");
  if (n < 0 || n > 24) throw ValidationError("subset enumeration supports up to 24 members");
  std::vector<std::vector<int>> out;
  for (int size = min_size; size <= n; ++size) {
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) idx[i] = i;
    while (true) {
      out.push_back(idx);
      int i = size - 1;
      while (i >= 0 && idx[i] == n - size + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (int j = i + 1; j < size; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

LabelGrid hard_labels(const ProbabilityVolume& v) {
  LabelGrid g;
  g.shape = v.shape;
  const Index n = v.voxels();
  g.labels.assign(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index k = 1; k < v.classes; ++k)
      if (v.probs[k * n + i] > v.probs[best * n + i]) best = k;
    g.labels[i] = static_cast<std::uint8_t>(best);
  }
  return g;
}

double soft_dice_volumes(const std::vector<ProbabilityVolume>& probs, const std::vector<const PatientCase*>& refs) {
  if (probs.size() != refs.size() || probs.empty()) throw ValidationError("soft Dice needs matching volumes");
  const Index C = probs.front().classes;
  std::vector<double> inter(C, 0), denom(C, 0);
  std::vector<bool> present(C, false);
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const auto& v = probs[j];
    const auto& r = *refs[j];
    if (v.shape != r.shape || v.classes != C) throw ValidationError("soft Dice volume misaligned");
    const Index n = v.voxels();
    for (Index k = 1; k < C; ++k)
      for (Index i = 0; i < n; ++i) {
        const double p = v.probs[k * n + i];
        const bool g = r.mask[i] == k;
        denom[k] += p + (g ? 1 : 0);
        if (g) {
          inter[k] += p;
          present[k] = true;
        }
      }
  }
  double s = 0;
  int used = 0;
  for (Index k = 1; k < C; ++k) {
    if (!present[k]) continue;
    s += (2 * inter[k] + 1e-5) / (denom[k] + 1e-5);
    ++used;
  }
  return used ? s / used : 1.0;
}

void write_probs(const ProbabilityVolume& v, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json h = {{"id", v.id},
                      {"shape", {v.classes, v.shape[0], v.shape[1], v.shape[2]}},
                      {"spacing_mm", v.spacing},
                      {"classes", v.class_names},
                      {"dtype", "f32le"}};
  write_json(dir / "probs.json", h);
  write_f32le(dir / "probs.raw", v.probs);
}

ProbabilityVolume read_probs(const std::filesystem::path& dir) {
  const auto h = read_json(dir / "probs.json");
  ProbabilityVolume v;
  try {
    v.id = h.at("id").get<std::string>();
    const auto s = h.at("shape").get<std::array<Index, 4>>();
    v.classes = s[0];
    v.shape = {s[1], s[2], s[3]};
    v.spacing = h.at("spacing_mm").get<std::array<double, 3>>();
    v.class_names = h.at("classes").get<std::vector<std::string>>();
    if (h.value("dtype", std::string("f32le")) != "f32le") throw ValidationError("unknown probability dtype");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "probs.json").string() + ": " + e.what());
  }
  if (v.classes < 2 || v.shape[0] < 1 || v.shape[1] < 1 || v.shape[2] < 1) throw ValidationError("invalid probability header");
  v.probs = read_f32le(dir / "probs.raw", v.classes * v.voxels());
  return v;
}

}  // namespace oarseg
