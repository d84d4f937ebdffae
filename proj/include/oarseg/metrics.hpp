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

// Segmentation metrics and the statistics used to compare models.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oarseg/tensor.hpp"

namespace oarseg {

struct LabelGrid {
  std::array<Index, 3> shape{0, 0, 0};  // D, H, W
  std::vector<std::uint8_t> labels;

  Index voxels() const { return shape[0] * shape[1] * shape[2]; }
};

enum class EmptyRule {
  // reference empty -> absent (prediction-vs-ground-truth evaluation)
  Reference,
  // exactly one side empty -> 0, so swapping roles never changes the value
  Symmetric,
};

// 2|P n R| / (|P| + |R|) over voxels labelled c. Both empty -> absent; only the
// reference empty -> absent (Reference) or 0 (Symmetric); only the prediction empty -> 0.
std::optional<double> dice(const LabelGrid& pred, const LabelGrid& ref, int c, EmptyRule rule = EmptyRule::Reference);

// Boundary voxels of the class-c region: members with a face neighbour outside
// the region or outside the grid (axes of extent 1 are ignored, giving
// 4-connectivity on single slices).
std::vector<Index> boundary_voxels(const LabelGrid& g, int c);

// Exact Euclidean distance (mm) from every voxel to the nearest site.
std::vector<double> distance_to_sites(std::array<Index, 3> shape, const std::vector<Index>& sites,
                                      std::array<double, 3> spacing);

// Linear interpolation between order statistics, q in [0, 1].
double percentile(std::vector<double> values, double q);

// max of the two directed 95th percentile boundary distances; both empty ->
// absent; exactly one empty -> grid diagonal in mm.
std::optional<double> hd95(const LabelGrid& pred, const LabelGrid& ref, int c, std::array<double, 3> spacing);

struct MetricEntry {
  std::string model;
  int fold = 0;
  std::string patient;
  std::string class_name;
  std::optional<double> dice;
  std::optional<double> hd95_mm;
};

enum class Metric { Dice, HD95 };

struct MeanStd {
  double mean = 0;
  double std = 0;
  int n = 0;
};

struct AggregateReport {
  std::vector<std::string> classes;
  std::vector<int> folds;
  // fold_class[f][c]: mean over patients with a present value
  std::vector<std::vector<std::optional<double>>> fold_class;
  std::vector<MeanStd> per_class;  // mean and std over folds
  std::vector<std::optional<double>> fold_avg;  // cross-class mean per fold
  MeanStd avg;
  // (fold, class) cells without any present value
  std::vector<std::pair<int, std::string>> flagged;
};

// Single-model aggregation: per fold and class over patients, then per class
// over folds, then the cross-class Avg per fold, summarized over folds
// (population std). Class order follows `classes` when given, else first appearance.
AggregateReport aggregate(const std::vector<MetricEntry>& entries, Metric metric,
                          const std::vector<std::string>& classes = {});

struct PairwiseMatrix {
  std::vector<std::string> models;
  // [i][j] mean / std over folds of the Avg Dice; diagonal unset
  std::vector<std::vector<std::optional<MeanStd>>> cells;
};

// Hard labels per model per patient, all models on the same patients.
using PredictionSet = std::map<std::string, std::map<std::string, LabelGrid>>;

PairwiseMatrix pairwise_model_dice(const PredictionSet& preds, const std::map<std::string, int>& patient_fold,
                                   const std::vector<std::string>& class_names);

enum class WilcoxonMode { Exact, Approx, Auto };

struct WilcoxonResult {
  int n = 0;  // non-zero differences
  double w_plus = 0;
  double w_minus = 0;
  double statistic = 0;  // min(W+, W-)
  double p_two_sided = 1;
  bool degenerate = false;
  bool exact = true;
};

// Wilcoxon signed-rank test; zeros dropped, mid-ranks for ties. Exact mode
// needs n <= 25; Auto picks exact there and the normal approximation above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                    WilcoxonMode mode = WilcoxonMode::Auto);

// scores[m][f]: average over models per fold, return the fold holding the lower
// median; among equal values the smallest fold index.
int median_fold_select(const std::vector<std::vector<double>>& scores);

void write_metrics_csv(const std::filesystem::path& p, const std::vector<MetricEntry>& entries);
std::vector<MetricEntry> read_metrics_csv(const std::filesystem::path& p);

}  // namespace oarseg
