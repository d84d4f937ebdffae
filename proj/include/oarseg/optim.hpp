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

#include <cmath>
#include <limits>
#include <vector>

#include "oarseg/nn.hpp"

namespace oarseg {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Decoupled weight decay Adam. Normalization parameters and biases are not decayed.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<T>> params, AdamWConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
  }

  void step(double lr) {
    for (const auto& p : params_) {
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("adamw_step", p.name, "non-finite gradient");
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const bool decay = p.kind == ParamKind::Weight || p.kind == ParamKind::Embedding;
      const double keep = 1.0 - lr * (decay ? cfg_.weight_decay : 0.0);
      auto val = p.tensor.data();
      auto grad = p.tensor.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
        m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g * g;
        const double upd = (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        val[j] = static_cast<T>(static_cast<double>(val[j]) * keep - lr * upd);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }
  long steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<NamedParam<T>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Halves the learning rate after `patience` consecutive epochs without a
// strict improvement of the epoch loss, never below the floor.
struct PlateauScheduler {
  double lr = 3e-4;
  double factor = 0.5;
  int patience = 3;
  double min_lr = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  double step(double loss) {
    if (loss < best) {
      best = loss;
      bad_epochs = 0;
    } else if (++bad_epochs >= patience) {
      lr = std::max(lr * factor, min_lr);
      bad_epochs = 0;
    }
    return lr;
  }
};

}  // namespace oarseg
