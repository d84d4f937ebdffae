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


#include "oarseg/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "oarseg/checkpoint.hpp"
#include "oarseg/io.hpp"

namespace oarseg {

using nlohmann::json;

TrainConfig TrainConfig::preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "cervix") {
    c.patch = {320, 320};
    c.epochs = 100;
    c.augment.flip = false;
  } else if (name == "brain") {
    c.patch = {128, 128};
    c.epochs = 50;
    c.augment.flip = true;
  } else if (name == "desk") {
    c.patch = {64, 64};
    c.epochs = 5;
    c.batch = 8;
    c.augment.flip = false;
  } else {
    throw ValidationError("unknown training preset '" + name + "' (cervix, brain, desk)");
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr_factor > 0 && lr_factor < 1)) throw ValidationError("lr_factor must lie in (0, 1)");
  if (!(lr_min <= lr) || !(lr > 0)) throw ValidationError("need 0 < lr_min <= lr");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (patch[0] < 1 || patch[1] < 1) throw ValidationError("patch must be positive");
  if (iterations_per_epoch < 0) throw ValidationError("iterations_per_epoch must be >= 0");
  if (fg_fraction < 0 || fg_fraction > 1) throw ValidationError("fg_fraction must lie in [0, 1]");
  if (weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
  if (overlap < 0 || overlap >= 1) throw ValidationError("overlap must lie in [0, 1)");
}

json train_config_to_json(const TrainConfig& c) {
  return {{"preset", c.preset},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"lr_factor", c.lr_factor},
          {"lr_min", c.lr_min},
          {"patch", c.patch},
          {"loss_weights", {{"dice", c.loss_weights.dice}, {"ce", c.loss_weights.ce}}},
          {"seed", c.seed},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"fg_fraction", c.fg_fraction},
          {"augment",
           {{"rotate", c.augment.rotate},
            {"scale", c.augment.scale},
            {"flip", c.augment.flip},
            {"probability", c.augment.probability},
            {"max_rotation_deg", c.augment.max_rotation_deg},
            {"scale_min", c.augment.scale_min},
            {"scale_max", c.augment.scale_max}}},
          {"overlap", c.overlap},
          {"validate_each_epoch", c.validate_each_epoch},
          {"deterministic", c.deterministic},
          {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c = TrainConfig::preset_config(j.value("preset", std::string("cervix")));
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.lr_factor = j.value("lr_factor", c.lr_factor);
    c.lr_min = j.value("lr_min", c.lr_min);
    if (j.contains("patch")) c.patch = j.at("patch").get<std::array<Index, 2>>();
    if (j.contains("loss_weights")) {
      c.loss_weights.dice = j["loss_weights"].value("dice", 1.0);
      c.loss_weights.ce = j["loss_weights"].value("ce", 1.0);
    }
    c.seed = j.value("seed", c.seed);
    c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
    c.fg_fraction = j.value("fg_fraction", c.fg_fraction);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      c.augment.rotate = a.value("rotate", c.augment.rotate);
      c.augment.scale = a.value("scale", c.augment.scale);
      c.augment.flip = a.value("flip", c.augment.flip);
      c.augment.probability = a.value("probability", c.augment.probability);
      c.augment.max_rotation_deg = a.value("max_rotation_deg", c.augment.max_rotation_deg);
      c.augment.scale_min = a.value("scale_min", c.augment.scale_min);
      c.augment.scale_max = a.value("scale_max", c.augment.scale_max);
    }
    c.overlap = j.value("overlap", c.overlap);
    c.validate_each_epoch = j.value("validate_each_epoch", c.validate_each_epoch);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid training config: ") + e.what());
  }
}

Trainer::Trainer(Model<float>& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      opt_(model.parameters(), AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay}),
      sched_{cfg.lr, cfg.lr_factor, cfg.patience, cfg.lr_min},
      lr_(cfg.lr) {}

double Trainer::step(const Tensor<float>& images, const std::vector<std::uint8_t>& labels) {
  opt_.zero_grad();
  try {
    auto loss = dice_ce_loss(model_.forward_probs(images), labels, cfg_.loss_weights);
    loss.backward();
    opt_.step(lr_);
    return loss.item();
  } catch (const NumericError& e) {
    throw NumericError(e.op(), e.scope(), "training batch " + std::to_string(opt_.steps()) + ": " + e.what());
  }
}

ProbFn model_prob_fn(const Model<float>& m) {
  return [&m](const Tensor<float>& x) { return m.forward_probs(x); };
}

void write_train_log(const std::filesystem::path& p, const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,step,lr,train_loss,val_soft_dice,wall_seconds\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.step << ',' << e.lr << ',' << e.train_loss << ',';
    if (e.val_soft_dice) os << *e.val_soft_dice;
    os << ',' << e.wall_seconds << '\n';
  }
  write_text(p, os.str());
}

TrainResult train_fold(const ModelSpec& spec, const std::vector<PatientCase>& cases, const FoldSplit& split, int fold,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (fold < 0 || fold >= split.k) throw ValidationError("fold index out of range");
  std::vector<const PatientCase*> train, val;
  for (const auto& c : cases) {
    auto it = split.assignments.find(c.id);
    if (it == split.assignments.end()) throw ValidationError("case " + c.id + " is not in the fold split");
    if (c.channels != spec.in_channels) throw ValidationError("case " + c.id + " channel count does not match the model");
    (it->second == fold ? val : train).push_back(&c);
  }
  if (train.empty()) throw ValidationError("empty training partition for fold " + std::to_string(fold));

  TrainResult res{build_model<float>(spec, cfg.seed), {}, std::nullopt, -1};
  auto& model = res.model;
  model.train();
  Trainer trainer(model, cfg);
  std::vector<PatchSampler> samplers;
  Index slices = 0;
  for (const auto* c : train) {
    samplers.emplace_back(*c);
    slices += c->shape[0];
  }
  const int ipe = cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch
                                               : static_cast<int>((slices + cfg.batch - 1) / cfg.batch);
  Rng rng(derive_seed(cfg.seed, "data"));
  const Index M = spec.in_channels, ph = cfg.patch[0], pw = cfg.patch[1];
  const auto t0 = std::chrono::steady_clock::now();
  SlidingWindow sw{cfg.patch, cfg.overlap, 8, cfg.deterministic ? 1 : 0};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    for (int it = 0; it < ipe; ++it) {
      std::vector<float> img(static_cast<std::size_t>(cfg.batch * M * ph * pw));
      std::vector<std::uint8_t> lab(static_cast<std::size_t>(cfg.batch * ph * pw));
      for (Index b = 0; b < cfg.batch; ++b) {
        const auto& s = samplers[rng.below(samplers.size())];
        const auto patch = augment(s.sample(cfg.patch, rng, cfg.fg_fraction), cfg.augment, rng);
        std::copy(patch.image.begin(), patch.image.end(), img.begin() + b * M * ph * pw);
        std::copy(patch.mask.begin(), patch.mask.end(), lab.begin() + b * ph * pw);
      }
      loss_sum += trainer.step(Tensor<float>::from({cfg.batch, M, ph, pw}, std::move(img)), lab);
    }
    EpochLog e;
    e.epoch = epoch;
    e.step = trainer.steps();
    e.lr = trainer.lr();
    e.train_loss = loss_sum / ipe;
    trainer.end_epoch(e.train_loss);
    if (!val.empty() && (cfg.validate_each_epoch || epoch + 1 == cfg.epochs)) {
      model.eval();
      std::vector<ProbabilityVolume> pv;
      for (const auto* c : val) pv.push_back(predict_volume(model_prob_fn(model), *c, spec.num_classes, sw));
      e.val_soft_dice = soft_dice_volumes(pv, val);
      model.train();
      if (!res.best_val || *e.val_soft_dice > *res.best_val) {
        res.best_val = e.val_soft_dice;
        res.best_epoch = epoch;
        if (!out_dir.empty()) save_checkpoint(model, out_dir / "best");
      }
    }
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model.eval();
  if (!out_dir.empty()) {
    save_checkpoint(model, out_dir);
    write_train_log(out_dir / "train_log.csv", res.log);
  }
  return res;
}

}  // namespace oarseg
