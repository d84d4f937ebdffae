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

// Patient volumes, preprocessing, augmentation, patch sampling and folds.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oarseg/rng.hpp"
#include "oarseg/tensor.hpp"

namespace oarseg {

struct PatientCase {
  std::string id;
  Index channels = 1;
  std::array<Index, 3> shape{0, 0, 0};  // D, H, W
  std::array<double, 3> spacing{1, 1, 1};  // sz, sy, sx in mm
  std::vector<float> image;  // [M, D, H, W]
  std::vector<std::uint8_t> mask;  // [D, H, W], labels 0..C
  std::vector<std::string> class_names;  // C organ names, background excluded
  // Voxel offset of this grid inside the original scan (set by crop_nonzero).
  std::array<Index, 3> offset{0, 0, 0};

  Index voxels() const { return shape[0] * shape[1] * shape[2]; }
  Index slice_pixels() const { return shape[1] * shape[2]; }
  Index num_labels() const { return static_cast<Index>(class_names.size()) + 1; }
  void validate() const;
};

void write_case(const PatientCase& c, const std::filesystem::path& dir);
PatientCase read_case(const std::filesystem::path& dir);

struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
};

void write_dataset(const std::vector<PatientCase>& cases, const std::filesystem::path& root);
Dataset read_dataset_index(const std::filesystem::path& root);
std::vector<PatientCase> read_dataset(const std::filesystem::path& root);

// Default organ roster of the phantoms.
std::vector<std::string> default_class_names(int classes);

std::vector<PatientCase> synth_generate(int n_patients, int classes, std::array<Index, 3> extent,
                                        std::uint64_t seed);

PatientCase crop_nonzero(const PatientCase& c);
PatientCase resample(const PatientCase& c, std::array<double, 3> target_spacing);
// Same interpolation onto an explicit output extent.
PatientCase resample_to_shape(const PatientCase& c, std::array<Index, 3> shape, std::array<double, 3> spacing);
std::array<double, 3> median_spacing(const std::vector<PatientCase>& cases);
PatientCase zscore(const PatientCase& c);
PatientCase preprocess(const PatientCase& c, std::array<double, 3> target_spacing);

// 1-D cubic B-spline interpolation of f at (fractional) sample positions.
std::vector<double> spline_interpolate(const std::vector<double>& f, const std::vector<double>& positions);

// One axial slice: image [M,H,W], mask [H,W].
struct Slice {
  Index channels = 1;
  Index height = 0;
  Index width = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> mask;
};

Slice extract_slice(const PatientCase& c, Index z);

struct AugmentPolicy {
  bool rotate = true;
  bool scale = true;
  bool flip = false;
  double probability = 0.5;
  double max_rotation_deg = 15.0;
  double scale_min = 0.85;
  double scale_max = 1.15;
};

// Rotation (degrees, counter-clockwise in (row, col) view) and isotropic scale
// about the slice centre, then an optional horizontal flip. Bilinear image,
// nearest mask, zero / background outside.
Slice transform_slice(const Slice& s, double angle_deg, double scale, bool flip);
Slice augment(const Slice& s, const AugmentPolicy& policy, Rng& rng);

// Draws training patches from one case; foreground voxel indices are cached.
class PatchSampler {
 public:
  explicit PatchSampler(const PatientCase& c);
  Slice sample(std::array<Index, 2> patch, Rng& rng, double fg_fraction) const;
  // Crop centred at (z, y, x), clamped inside the slice, zero padded when the slice is small.
  Slice crop_at(Index z, Index cy, Index cx, std::array<Index, 2> patch) const;

 private:
  const PatientCase* case_;
  std::vector<Index> foreground_;
};

Slice sample_patch(const PatientCase& c, std::array<Index, 2> patch, Rng& rng, double fg_fraction);

struct FoldSplit {
  int k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;

  std::vector<std::string> fold_ids(int fold) const;
  std::vector<std::string> train_ids(int fold) const;
};

FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

}  // namespace oarseg
