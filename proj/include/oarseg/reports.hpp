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

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/models.hpp"

namespace oarseg {

nlohmann::json aggregate_to_json(const AggregateReport& r);
nlohmann::json pairwise_to_json(const PairwiseMatrix& m);
nlohmann::json wilcoxon_to_json(const WilcoxonResult& r, double alpha = 0.05);

// Rows are models, columns the organ classes then Avg; cells are mean ± std over folds.
std::string render_class_table(const std::string& title, const std::vector<std::pair<std::string, AggregateReport>>& rows,
                               int digits);
// Square model-by-model matrix of mean ± std Avg Dice.
std::string render_pairwise_table(const PairwiseMatrix& m, int digits);
std::string pairwise_csv(const PairwiseMatrix& m);

struct ParamRow {
  std::string arch;
  Index measured = 0;
  Index reference = 0;
  std::vector<std::pair<std::string, Index>> modules;
  std::string note;
};
std::string param_discrepancy_note(Arch a, ScalePreset p);
nlohmann::json params_to_json(const std::vector<ParamRow>& rows, const std::string& preset);
std::string render_params_table(const std::vector<ParamRow>& rows, const std::string& preset);

}  // namespace oarseg
