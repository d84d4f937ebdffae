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

// Dice + cross-entropy training loss on class probabilities, fused into one
// graph node.

#include <cstdint>
#include <limits>
#include <vector>

#include "oarseg/tensor.hpp"

namespace oarseg {

struct LossWeights {
  double dice = 1.0;
  double ce = 1.0;
};

inline constexpr double kDiceSmooth = 1e-5;

namespace detail {

template <typename T>
void check_labels(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels) {
  if (probs.ndim() != 4) throw DimensionError("loss expects probabilities [N,C,H,W], got " + to_string(probs.shape()));
  const Index n = probs.dim(0), c = probs.dim(1), px = probs.dim(2) * probs.dim(3);
  if (static_cast<Index>(labels.size()) != n * px) {
    throw DimensionError("label map holds " + std::to_string(labels.size()) + " pixels, probabilities " +
                         std::to_string(n * px));
  }
  for (auto l : labels) {
    if (l >= c) throw ValidationError("label " + std::to_string(l) + " out of range for " + std::to_string(c) + " classes");
  }
}

// Per foreground class: intersection sum(p*g) and denominator sum(p) + sum(g).
template <typename T>
void dice_sums(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, std::vector<double>& inter,
               std::vector<double>& denom) {
  const Index n = probs.dim(0), c = probs.dim(1), px = probs.dim(2) * probs.dim(3);
  inter.assign(static_cast<std::size_t>(c), 0.0);
  denom.assign(static_cast<std::size_t>(c), 0.0);
  const T* p = probs.raw();
  for (Index b = 0; b < n; ++b) {
    for (Index k = 0; k < c; ++k) {
      const T* pk = p + (b * c + k) * px;
      const std::uint8_t* lb = labels.data() + b * px;
      double s = 0, i = 0, g = 0;
      for (Index j = 0; j < px; ++j) {
        s += pk[j];
        if (lb[j] == k) {
          i += pk[j];
          g += 1;
        }
      }
      inter[k] += i;
      denom[k] += s + g;
    }
  }
}

}  // namespace detail

// w_ce * mean(-log p[target]) + w_dice * (1 - mean_{c>=1} (2 sum pg + s) / (sum p + sum g + s)),
// with the Dice sums aggregated over the batch. Probabilities are clamped from
// below by the smallest normal value inside the log.
template <typename T>
Tensor<T> dice_ce_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels, LossWeights w = {}) {
  detail::check_labels(probs, labels);
  const Index n = probs.dim(0), c = probs.dim(1), px = probs.dim(2) * probs.dim(3);
  const double tiny = std::numeric_limits<T>::min();
  const T* p = probs.raw();
  double ce = 0;
  for (Index b = 0; b < n; ++b) {
    for (Index j = 0; j < px; ++j) {
      const double pt = p[(b * c + labels[b * px + j]) * px + j];
      ce -= std::log(std::max(pt, tiny));
    }
  }
  const double count = static_cast<double>(n * px);
  ce /= count;
  std::vector<double> inter, denom;
  detail::dice_sums(probs, labels, inter, denom);
  double dsum = 0;
  for (Index k = 1; k < c; ++k) dsum += (2 * inter[k] + kDiceSmooth) / (denom[k] + kDiceSmooth);
  const double fg = static_cast<double>(c - 1);
  const double loss = w.ce * ce + w.dice * (1.0 - dsum / fg);

  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels);
  return make_result<T>("dice_ce_loss", {1}, {static_cast<T>(loss)}, {probs},
                        [=](Node<T>& o) {
                          const double g0 = o.grad[0];
                          const T* pv = o.in(0).value.data();
                          T* gp = o.in(0).grad_data();
                          for (Index b = 0; b < n; ++b) {
                            for (Index k = 0; k < c; ++k) {
                              const Index base = (b * c + k) * px;
                              const double s = denom[k] + kDiceSmooth, num = 2 * inter[k] + kDiceSmooth;
                              for (Index j = 0; j < px; ++j) {
                                const bool hit = (*lab)[b * px + j] == k;
                                double d = 0;
                                if (hit && pv[base + j] > tiny) d -= w.ce / (count * pv[base + j]);
                                if (k > 0) d -= w.dice / fg * ((hit ? 2.0 : 0.0) * s - num) / (s * s);
                                gp[base + j] += static_cast<T>(g0 * d);
                              }
                            }
                          }
                        });
}

// Mean soft Dice over the foreground classes present in the labels (batch
// aggregated). Used as the overfit and validation score.
template <typename T>
double soft_dice_score(const Tensor<T>& probs, const std::vector<std::uint8_t>& labels) {
  detail::check_labels(probs, labels);
  const Index c = probs.dim(1);
  std::vector<bool> present(static_cast<std::size_t>(c), false);
  for (auto l : labels) present[l] = true;
  std::vector<double> inter, denom;
  detail::dice_sums(probs, labels, inter, denom);
  double s = 0;
  int used = 0;
  for (Index k = 1; k < c; ++k) {
    if (!present[k]) continue;
    s += (2 * inter[k] + kDiceSmooth) / (denom[k] + kDiceSmooth);
    ++used;
  }
  return used ? s / used : 1.0;
}

}  // namespace oarseg
