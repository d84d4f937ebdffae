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


#include "oarseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "oarseg/io.hpp"

namespace oarseg {

namespace {

void check_aligned(const LabelGrid& a, const LabelGrid& b) {
  if (a.shape != b.shape || a.labels.size() != b.labels.size() ||
      static_cast<Index>(a.labels.size()) != a.voxels()) {
    throw ValidationError("label grids are not aligned");
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of one line with sample pitch `h` (Felzenszwalb-Huttenlocher).
void edt_line(std::vector<double>& f, double h, std::vector<double>& d, std::vector<Index>& v, std::vector<double>& z) {
  const Index n = static_cast<Index>(f.size());
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  d.resize(static_cast<std::size_t>(n));
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double xq = static_cast<double>(q) * h;
    while (k >= 0) {
      const double xv = static_cast<double>(v[k]) * h;
      const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2 * (xq - xv));
      if (s <= z[k]) {
        --k;
      } else {
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    const double xq = static_cast<double>(q) * h;
    while (z[j + 1] < xq) ++j;
    const double xv = static_cast<double>(v[j]) * h;
    d[q] = (xq - xv) * (xq - xv) + f[v[j]];
  }
  f = d;
}

}  // namespace

std::optional<double> dice(const LabelGrid& pred, const LabelGrid& ref, int c, EmptyRule rule) {
  check_aligned(pred, ref);
  Index p = 0, r = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool a = pred.labels[i] == c, b = ref.labels[i] == c;
    p += a;
    r += b;
    both += a && b;
  }
  if (p == 0 && r == 0) return std::nullopt;
  if (r == 0 && rule == EmptyRule::Reference) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + r);
}

std::vector<Index> boundary_voxels(const LabelGrid& g, int c) {
  const Index D = g.shape[0], H = g.shape[1], W = g.shape[2];
  std::vector<Index> out;
  const Index ext[3] = {D, H, W};
  for (Index z = 0; z < D; ++z)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index i = (z * H + y) * W + x;
        if (g.labels[i] != c) continue;
        const Index pos[3] = {z, y, x};
        bool edge = false;
        for (int a = 0; a < 3 && !edge; ++a) {
          if (ext[a] == 1) continue;
          for (int s : {-1, 1}) {
            Index q[3] = {pos[0], pos[1], pos[2]};
            q[a] += s;
            if (q[a] < 0 || q[a] >= ext[a] || g.labels[(q[0] * H + q[1]) * W + q[2]] != c) {
              edge = true;
              break;
            }
          }
        }
        if (edge) out.push_back(i);
      }
  return out;
}

std::vector<double> distance_to_sites(std::array<Index, 3> shape, const std::vector<Index>& sites,
                                      std::array<double, 3> spacing) {
  const Index D = shape[0], H = shape[1], W = shape[2];
  std::vector<double> f(static_cast<std::size_t>(D * H * W), kInf);
  for (Index s : sites) f[s] = 0;
  std::vector<double> line, d, z;
  std::vector<Index> v;
  const Index ext[3] = {D, H, W};
  const Index stride[3] = {H * W, W, 1};
  for (int a = 0; a < 3; ++a) {
    const Index n = ext[a];
    line.resize(static_cast<std::size_t>(n));
    for (Index base = 0; base < D * H * W; ++base) {
      // visit each line once: its first element has coordinate 0 on axis a
      if ((base / stride[a]) % n != 0) continue;
      for (Index i = 0; i < n; ++i) line[i] = f[base + i * stride[a]];
      edt_line(line, spacing[a], d, v, z);
      for (Index i = 0; i < n; ++i) f[base + i * stride[a]] = line[i];
    }
  }
  for (auto& x : f) x = std::sqrt(x);
  return f;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const LabelGrid& pred, const LabelGrid& ref, int c, std::array<double, 3> spacing) {
  check_aligned(pred, ref);
  const auto bp = boundary_voxels(pred, c), br = boundary_voxels(ref, c);
  if (bp.empty() && br.empty()) return std::nullopt;
  if (bp.empty() || br.empty()) {
    double s = 0;
    for (int a = 0; a < 3; ++a) s += std::pow(static_cast<double>(pred.shape[a]) * spacing[a], 2);
    return std::sqrt(s);
  }
  const auto to_ref = distance_to_sites(ref.shape, br, spacing);
  const auto to_pred = distance_to_sites(pred.shape, bp, spacing);
  std::vector<double> dp, dr;
  for (Index i : bp) dp.push_back(to_ref[i]);
  for (Index i : br) dr.push_back(to_pred[i]);
  return std::max(percentile(dp, 0.95), percentile(dr, 0.95));
}

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = static_cast<int>(v.size());
  if (v.empty()) return r;
  double s = 0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  double q = 0;
  for (double x : v) q += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(q / static_cast<double>(v.size()));
  return r;
}

}  // namespace

AggregateReport aggregate(const std::vector<MetricEntry>& entries, Metric metric, const std::vector<std::string>& classes) {
  AggregateReport rep;
  rep.classes = classes;
  std::set<int> folds;
  for (const auto& e : entries) {
    folds.insert(e.fold);
    if (classes.empty() && std::find(rep.classes.begin(), rep.classes.end(), e.class_name) == rep.classes.end()) {
      rep.classes.push_back(e.class_name);
    }
  }
  rep.folds.assign(folds.begin(), folds.end());
  const std::size_t nf = rep.folds.size(), nc = rep.classes.size();
  // sums are accumulated in sorted-key order so the result is independent of entry order
  std::map<std::pair<int, std::size_t>, std::vector<std::pair<std::string, double>>> cells;
  for (const auto& e : entries) {
    const auto val = metric == Metric::Dice ? e.dice : e.hd95_mm;
    const auto it = std::find(rep.classes.begin(), rep.classes.end(), e.class_name);
    if (!val || it == rep.classes.end()) continue;
    cells[{e.fold, static_cast<std::size_t>(it - rep.classes.begin())}].push_back({e.patient, *val});
  }
  rep.fold_class.assign(nf, std::vector<std::optional<double>>(nc));
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t c = 0; c < nc; ++c) {
      auto it = cells.find({rep.folds[f], c});
      if (it == cells.end()) {
        rep.flagged.push_back({rep.folds[f], rep.classes[c]});
        continue;
      }
      auto v = it->second;
      std::sort(v.begin(), v.end());
      double s = 0;
      for (const auto& [p, x] : v) s += x;
      rep.fold_class[f][c] = s / static_cast<double>(v.size());
    }
  }
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<double> v;
    for (std::size_t f = 0; f < nf; ++f)
      if (rep.fold_class[f][c]) v.push_back(*rep.fold_class[f][c]);
    rep.per_class.push_back(mean_std(v));
  }
  std::vector<double> avgs;
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<double> v;
    for (std::size_t c = 0; c < nc; ++c)
      if (rep.fold_class[f][c]) v.push_back(*rep.fold_class[f][c]);
    if (v.empty()) {
      rep.fold_avg.push_back(std::nullopt);
      continue;
    }
    rep.fold_avg.push_back(mean_std(v).mean);
    avgs.push_back(*rep.fold_avg.back());
  }
  rep.avg = mean_std(avgs);
  return rep;
}

PairwiseMatrix pairwise_model_dice(const PredictionSet& preds, const std::map<std::string, int>& patient_fold,
                                   const std::vector<std::string>& class_names) {
  PairwiseMatrix m;
  for (const auto& [name, _] : preds) m.models.push_back(name);
  const std::size_t n = m.models.size();
  m.cells.assign(n, std::vector<std::optional<MeanStd>>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = preds.at(m.models[i]);
      const auto& b = preds.at(m.models[j]);
      if (a.size() != b.size()) throw ValidationError("models " + m.models[i] + " and " + m.models[j] + " cover different cases");
      std::vector<MetricEntry> entries;
      for (const auto& [patient, ref] : a) {
        auto it = b.find(patient);
        if (it == b.end()) throw ValidationError("model " + m.models[j] + " has no prediction for " + patient);
        auto fit = patient_fold.find(patient);
        if (fit == patient_fold.end()) throw ValidationError("no fold assignment for " + patient);
        for (std::size_t c = 0; c < class_names.size(); ++c) {
          entries.push_back({"pair", fit->second, patient, class_names[c],
                             dice(it->second, ref, static_cast<int>(c + 1), EmptyRule::Symmetric), std::nullopt});
        }
      }
      const auto rep = aggregate(entries, Metric::Dice, class_names);
      m.cells[i][j] = m.cells[j][i] = rep.avg;
    }
  }
  return m;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y, WilcoxonMode mode) {
  if (x.size() != y.size()) throw ValidationError("paired samples must have equal length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("non-finite sample");
    if (x[i] - y[i] != 0) d.push_back(x[i] - y[i]);
  }
  WilcoxonResult r;
  r.n = static_cast<int>(d.size());
  if (d.empty()) {
    r.degenerate = true;
    r.p_two_sided = 1.0;
    return r;
  }
  if (r.n < 5) throw ValidationError("need at least 5 non-zero differences, got " + std::to_string(r.n));
  // mid-ranks of |d|, kept doubled so they stay integral
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<long> rank2(d.size());
  double tie_term = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);  // 2 * mean rank
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long wp2 = 0, total2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total2 += rank2[i];
    if (d[i] > 0) wp2 += rank2[i];
  }
  r.w_plus = wp2 / 2.0;
  r.w_minus = (total2 - wp2) / 2.0;
  r.statistic = std::min(r.w_plus, r.w_minus);
  const bool exact = mode == WilcoxonMode::Exact || (mode == WilcoxonMode::Auto && r.n <= 25);
  if (mode == WilcoxonMode::Exact && r.n > 25) throw ValidationError("exact Wilcoxon supports n <= 25");
  r.exact = exact;
  if (exact) {
    // count sign assignments per doubled W+ value
    std::vector<std::uint64_t> ways(static_cast<std::size_t>(total2) + 1, 0);
    ways[0] = 1;
    long reach = 0;
    for (long rk : rank2) {
      for (long s = reach; s >= 0; --s)
        if (ways[s]) ways[s + rk] += ways[s];
      reach += rk;
    }
    std::uint64_t lo = 0, hi = 0;
    for (long s = 0; s <= total2; ++s) {
      if (s <= wp2) lo += ways[s];
      if (s >= wp2) hi += ways[s];
    }
    const double denom = std::ldexp(1.0, r.n);
    r.p_two_sided = std::min(1.0, 2.0 * static_cast<double>(std::min(lo, hi)) / denom);
  } else {
    const double n = r.n;
    const double mu = n * (n + 1) / 4;
    const double var = n * (n + 1) * (2 * n + 1) / 24 - tie_term / 48;
    const double z = std::max(0.0, std::abs(r.w_plus - mu) - 0.5) / std::sqrt(var);
    r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

int median_fold_select(const std::vector<std::vector<double>>& scores) {
  if (scores.empty() || scores[0].empty()) throw ValidationError("no fold scores");
  const std::size_t k = scores[0].size();
  std::vector<double> means(k, 0.0);
  for (const auto& row : scores) {
    if (row.size() != k) throw ValidationError("models report different fold counts");
    for (std::size_t f = 0; f < k; ++f) means[f] += row[f];
  }
  for (auto& m : means) m /= static_cast<double>(scores.size());
  auto sorted = means;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[(k - 1) / 2];
  for (std::size_t f = 0; f < k; ++f)
    if (means[f] == med) return static_cast<int>(f);
  return 0;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& p, const std::vector<MetricEntry>& entries) {
  std::string s = "model,fold,patient,class,dice,hd95_mm\n";
  for (const auto& e : entries) {
    s += e.model + "," + std::to_string(e.fold) + "," + e.patient + "," + e.class_name + "," + fmt(e.dice) + "," +
         fmt(e.hd95_mm) + "\n";
  }
  write_text(p, s);
}

std::vector<MetricEntry> read_metrics_csv(const std::filesystem::path& p) {
  std::istringstream is(read_text(p));
  std::string line;
  std::getline(is, line);
  if (split_csv(line) != std::vector<std::string>{"model", "fold", "patient", "class", "dice", "hd95_mm"}) {
    throw ValidationError(p.string() + ": unexpected metrics header");
  }
  std::vector<MetricEntry> out;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw ValidationError(p.string() + ": row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    MetricEntry e;
    try {
      e.model = f[0];
      e.fold = std::stoi(f[1]);
      e.patient = f[2];
      e.class_name = f[3];
      if (!f[4].empty()) e.dice = std::stod(f[4]);
      if (!f[5].empty()) e.hd95_mm = std::stod(f[5]);
    } catch (const std::exception&) {
      throw ValidationError(p.string() + ": malformed row " + std::to_string(row));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace oarseg
