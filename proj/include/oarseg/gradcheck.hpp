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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oarseg/ops.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  Index checked = 0;
  // Which tensor/element produced max_rel_err, for diagnostics.
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
};

// Compares analytic gradients of a random projection of f() against central
// differences for every element of every tensor in wrt. The relative error of
// one element is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> wrt,
                                  double tolerance, std::uint64_t seed = 0, double h = 1e-5,
                                  double floor = 1e-2) {
  GradCheckReport rep;
  Tensor<double> out0;
  {
    NoGradGuard ng;
    out0 = f();
  }
  Rng rng(derive_seed(seed, "grad_check.projection"));
  std::vector<double> proj(static_cast<std::size_t>(out0.numel()));
  for (auto& p : proj) p = rng.uniform(-1.0, 1.0);
  auto weights = Tensor<double>::from(out0.shape(), proj);

  auto loss_value = [&]() {
    NoGradGuard ng;
    const auto out = f();
    double s = 0;
    for (Index i = 0; i < out.numel(); ++i) s += out[i] * proj[static_cast<std::size_t>(i)];
    return s;
  };

  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto loss = sum(mul(f(), weights));
  loss.backward();

  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    analytic.resize(static_cast<std::size_t>(t.numel()), 0.0);
    for (Index i = 0; i < t.numel(); ++i) {
      double& x = t.raw()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_value();
      x = saved - h;
      const double down = loss_value();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.checked;
      if (err > rep.max_rel_err || std::isnan(err)) {
        rep.max_rel_err = err;
        rep.worst_tensor = ti;
        rep.worst_index = i;
      }
    }
    t.zero_grad();
  }
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace oarseg
