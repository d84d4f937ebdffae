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

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oarseg/data.hpp"
#include "oarseg/inference.hpp"
#include "oarseg/loss.hpp"
#include "oarseg/models.hpp"
#include "oarseg/optim.hpp"

namespace oarseg {

struct TrainConfig {
  std::string preset = "cervix";
  double lr = 3e-4;
  double weight_decay = 0.05;
  Index batch = 16;
  int epochs = 100;
  int patience = 3;
  double lr_factor = 0.5;
  double lr_min = 1e-5;
  std::array<Index, 2> patch{320, 320};
  LossWeights loss_weights{};
  std::uint64_t seed = 0;
  // 0 = ceil(training slices / batch)
  int iterations_per_epoch = 0;
  double fg_fraction = 1.0 / 3.0;
  AugmentPolicy augment{};
  double overlap = 0.5;
  bool validate_each_epoch = true;
  bool deterministic = false;

  static TrainConfig preset_config(const std::string& name);
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_soft_dice;
  double wall_seconds = 0;
};

// Optimizer + scheduler around one model.
class Trainer {
 public:
  Trainer(Model<float>& model, const TrainConfig& cfg);
  // One AdamW step on a batch; returns the loss.
  double step(const Tensor<float>& images, const std::vector<std::uint8_t>& labels);
  double end_epoch(double mean_loss) { return lr_ = sched_.step(mean_loss); }
  double lr() const { return lr_; }
  long steps() const { return opt_.steps(); }

 private:
  Model<float>& model_;
  TrainConfig cfg_;
  AdamW<float> opt_;
  PlateauScheduler sched_;
  double lr_;
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  std::optional<double> best_val;
  int best_epoch = -1;
};

// Model forward as a probability function (eval mode, no graph).
ProbFn model_prob_fn(const Model<float>& m);

// Trains on every case outside `fold`, validates on `fold`. When out_dir is set,
// writes train_log.csv, the final checkpoint (out_dir) and the best-validation
// checkpoint (out_dir/best).
TrainResult train_fold(const ModelSpec& spec, const std::vector<PatientCase>& cases, const FoldSplit& split, int fold,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                       const std::function<void(const EpochLog&)>& on_epoch = {});

void write_train_log(const std::filesystem::path& p, const std::vector<EpochLog>& log);

}  // namespace oarseg
