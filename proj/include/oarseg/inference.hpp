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

// Sliding-window slice inference and probability-averaging ensembles.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oarseg/data.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/tensor.hpp"

namespace oarseg {

struct ProbabilityVolume {
  std::string id;
  Index classes = 0;  // including background
  std::array<Index, 3> shape{0, 0, 0};  // D, H, W
  std::array<double, 3> spacing{1, 1, 1};
  std::vector<std::string> class_names;  // organ names, background excluded
  std::vector<float> probs;  // [C, D, H, W]

  Index voxels() const { return shape[0] * shape[1] * shape[2]; }
};

// Window origins along one axis.
std::vector<Index> window_layout(Index extent, Index patch, double overlap);

// Maps a batch [N, M, ph, pw] to class probabilities [N, C, ph, pw].
using ProbFn = std::function<Tensor<float>(const Tensor<float>&)>;

struct SlidingWindow {
  std::array<Index, 2> patch{64, 64};
  double overlap = 0.5;
  Index batch = 8;
  // worker threads over slices; 0 = from OARSEG_THREADS / hardware
  int workers = 0;
};

int worker_count(int requested);

// Per-pixel mean over covering windows in double precision, [C, D, H, W].
std::vector<double> accumulate_windows(const ProbFn& fn, const PatientCase& c, Index classes, const SlidingWindow& sw);

ProbabilityVolume predict_volume(const ProbFn& fn, const PatientCase& c, Index classes, const SlidingWindow& sw);

// Maps a volume predicted on the preprocessed grid of `original` back onto the original scan.
// Voxels outside the non-zero crop box are background with probability 1.
ProbabilityVolume restore_original_grid(const ProbabilityVolume& v, const PatientCase& original);
ProbabilityVolume predict_original(const ProbFn& fn, const PatientCase& original, Index classes, const SlidingWindow& sw,
                                   std::array<double, 3> target_spacing);

ProbabilityVolume ensemble_average(const std::vector<ProbabilityVolume>& members, std::vector<double> weights = {});

// All index subsets of {0..n-1} with at least min_size members, by size then lexicographically.
std::vector<std::vector<int>> enumerate_subsets(int n, int min_size);

// Per-voxel argmax; ties resolve to the lowest class index.
LabelGrid hard_labels(const ProbabilityVolume& v);

// Batch-aggregated soft Dice over foreground classes present in the references.
double soft_dice_volumes(const std::vector<ProbabilityVolume>& probs, const std::vector<const PatientCase*>& refs);

void write_probs(const ProbabilityVolume& v, const std::filesystem::path& dir);
ProbabilityVolume read_probs(const std::filesystem::path& dir);

}  // namespace oarseg
