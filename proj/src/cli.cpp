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


#include "oarseg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oarseg/checkpoint.hpp"
#include "oarseg/data.hpp"
#include "oarseg/errors.hpp"
#include "oarseg/inference.hpp"
#include "oarseg/io.hpp"
#include "oarseg/manifest.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/png.hpp"
#include "oarseg/reports.hpp"
#include "oarseg/training.hpp"
#include "oarseg/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oarseg::cli {

namespace {

// --- shared plumbing ----------------------------------------------------------

struct Run {
  RunManifest manifest;
  std::vector<fs::path> inputs;
  fs::path out;
  std::ostream* log = nullptr;
};

json dump_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "config") continue;
    if (o->get_expected_max() == 0) {
      j[name] = o->count() > 0;
      continue;
    }
    std::vector<std::string> vals = o->count() ? o->results() : std::vector<std::string>{};
    if (vals.empty()) {
      const auto d = o->get_default_str();
      if (d.empty() || d == "{}" || d == "[]") continue;
      vals = {d};
    }
    if (o->get_items_expected_max() > 1) {
      j[name] = vals;
    } else {
      j[name] = vals.back();
    }
  }
  return j;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

SlidingWindow window_for(const json& info, int workers, bool deterministic) {
  SlidingWindow sw;
  if (info.contains("patch")) sw.patch = info["patch"].get<std::array<Index, 2>>();
  sw.overlap = info.value("overlap", 0.5);
  sw.workers = deterministic ? 1 : workers;
  return sw;
}

LabelGrid grid_of(const PatientCase& c) { return LabelGrid{c.shape, c.mask}; }

std::vector<MetricEntry> score_case(const std::string& model, int fold, const LabelGrid& pred, const PatientCase& ref) {
  if (pred.shape != ref.shape) throw ValidationError("prediction for " + ref.id + " is not on the reference grid");
  std::vector<MetricEntry> out;
  const LabelGrid rg = grid_of(ref);
  for (std::size_t c = 0; c < ref.class_names.size(); ++c) {
    const int k = static_cast<int>(c + 1);
    out.push_back({model, fold, ref.id, ref.class_names[c], dice(pred, rg, k), hd95(pred, rg, k, ref.spacing)});
  }
  return out;
}

// --- checkpoints and prediction directories ----------------------------------------

json training_info(const fs::path& ckpt) {
  for (const auto& p : {ckpt / "training.json", ckpt.parent_path() / "training.json"})
    if (fs::exists(p)) return read_json(p);
  return json::object();
}

struct Member {
  fs::path dir;
  json info;
  std::optional<Model<float>> model;
  std::set<std::string> held_out;
};

Member load_member(const fs::path& dir) {
  if (!fs::exists(dir / "model.json")) throw ValidationError(dir.string() + " is not a checkpoint (no model.json)");
  Member m;
  m.dir = dir;
  m.info = training_info(dir);
  m.model.emplace(load_checkpoint(dir));
  if (m.info.contains("val_ids"))
    for (const auto& id : m.info["val_ids"]) m.held_out.insert(id.get<std::string>());
  return m;
}

std::string member_name(const Member& m) {
  if (m.info.contains("name")) return m.info["name"].get<std::string>();
  return arch_name(m.model->spec().arch);
}

ProbabilityVolume predict_with(const Member& m, const PatientCase& c, const SlidingWindow& sw) {
  std::array<double, 3> target = c.spacing;
  if (m.info.contains("target_spacing")) target = m.info["target_spacing"].get<std::array<double, 3>>();
  const Index classes = m.model->spec().num_classes;
  if (classes != c.num_labels()) {
    throw ValidationError("checkpoint " + m.dir.string() + " predicts " + std::to_string(classes) +
                          " classes but case " + c.id + " has " + std::to_string(c.num_labels()));
  }
  return predict_original(model_prob_fn(*m.model), c, classes, sw, target);
}

struct ModelPreds {
  std::string name;
  std::map<std::string, int> fold;
  std::map<std::string, fs::path> dir;
};

void write_predictions_index(const fs::path& out, const std::string& name, const std::map<std::string, int>& fold,
                             const json& extra) {
  json cases = json::array();
  for (const auto& [id, f] : fold) cases.push_back({{"id", id}, {"fold", f}});
  json j = extra;
  j["model"] = name;
  j["cases"] = cases;
  write_json(out / "predictions.json", j);
}

// Prediction directories sharing a model name are merged (e.g. one per fold).
std::vector<ModelPreds> read_prediction_dirs(const std::vector<fs::path>& dirs) {
  std::vector<ModelPreds> models;
  for (const auto& d : dirs) {
    if (!fs::exists(d / "predictions.json")) throw ValidationError(d.string() + " has no predictions.json");
    const auto j = read_json(d / "predictions.json");
    const std::string name = j.at("model").get<std::string>();
    auto it = std::find_if(models.begin(), models.end(), [&](const ModelPreds& m) { return m.name == name; });
    if (it == models.end()) {
      models.push_back({name, {}, {}});
      it = models.end() - 1;
    }
    for (const auto& c : j.at("cases")) {
      const std::string id = c.at("id").get<std::string>();
      if (it->dir.count(id)) throw ValidationError("model " + name + " has two predictions for case " + id);
      it->fold[id] = c.value("fold", 0);
      it->dir[id] = d / id;
    }
  }
  return models;
}

std::vector<std::string> common_cases(const std::vector<ModelPreds>& models) {
  if (models.empty()) throw ValidationError("no prediction sets given");
  std::vector<std::string> ids;
  for (const auto& [id, _] : models.front().dir) ids.push_back(id);
  for (const auto& m : models) {
    std::vector<std::string> mine;
    for (const auto& [id, _] : m.dir) mine.push_back(id);
    if (mine != ids) throw ValidationError("models " + models.front().name + " and " + m.name + " cover different cases");
  }
  return ids;
}

std::vector<MetricEntry> evaluate_model(const ModelPreds& m, const fs::path& refs) {
  std::vector<MetricEntry> entries;
  for (const auto& [id, dir] : m.dir) {
    const auto ref = read_case(refs / id);
    const auto e = score_case(m.name, m.fold.at(id), hard_labels(read_probs(dir)), ref);
    entries.insert(entries.end(), e.begin(), e.end());
  }
  return entries;
}

std::vector<MetricEntry> filter_model(const std::vector<MetricEntry>& all, const std::string& model) {
  std::vector<MetricEntry> out;
  for (const auto& e : all)
    if (e.model == model) out.push_back(e);
  return out;
}

json class_reports(const std::vector<std::pair<std::string, AggregateReport>>& dice_rows,
                   const std::vector<std::pair<std::string, AggregateReport>>& hd_rows) {
  json j = json::object();
  for (std::size_t i = 0; i < dice_rows.size(); ++i) {
    j[dice_rows[i].first] = {{"dice", aggregate_to_json(dice_rows[i].second)},
                             {"hd95_mm", aggregate_to_json(hd_rows[i].second)}};
  }
  return j;
}

// --- subcommands ----------------------------------------------------------------

struct SynthOpts {
  fs::path out;
  int patients = 24, classes = 4, depth = 16, height = 96, width = 96;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthOpts& o, Run& r) {
  const auto cases = synth_generate(o.patients, o.classes, {o.depth, o.height, o.width}, o.seed);
  write_dataset(cases, o.out);
  r.manifest.resolved = {{"patients", o.patients}, {"classes", default_class_names(o.classes)},
                         {"extent", {o.depth, o.height, o.width}}};
  r.manifest.seeds = {{"seed", o.seed}};
  *r.log << "wrote " << cases.size() << " cases to " << o.out.string() << "\n";
}

struct TrainOpts {
  fs::path data, out;
  std::string arch, preset = "desk";
  int folds = 5, fold = 0, epochs = 0, iterations = 0, batch = 0, patch = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
};

void cmd_train(const TrainOpts& o, Run& r) {
  const Arch arch = parse_arch(o.arch);
  TrainConfig cfg = TrainConfig::preset_config(o.preset);
  if (o.epochs > 0) cfg.epochs = o.epochs;
  if (o.iterations > 0) cfg.iterations_per_epoch = o.iterations;
  if (o.batch > 0) cfg.batch = o.batch;
  if (o.patch > 0) cfg.patch = {o.patch, o.patch};
  if (o.lr > 0) cfg.lr = o.lr;
  cfg.seed = o.seed;
  cfg.deterministic = o.deterministic;
  cfg.validate();

  const auto cases = read_dataset(o.data);
  if (cases.empty()) throw ValidationError("dataset " + o.data.string() + " is empty");
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const auto split = make_folds(ids, o.folds, o.seed);
  if (o.fold < 0 || o.fold >= o.folds) throw ValidationError("fold must lie in [0, folds)");
  const auto train_ids = split.train_ids(o.fold);
  std::vector<PatientCase> train_cases;
  for (const auto& c : cases)
    if (std::find(train_ids.begin(), train_ids.end(), c.id) != train_ids.end()) train_cases.push_back(c);
  if (train_cases.empty()) throw ValidationError("fold " + std::to_string(o.fold) + " leaves no training cases");
  const auto target = median_spacing(train_cases);
  std::vector<PatientCase> pre;
  for (const auto& c : cases) pre.push_back(preprocess(c, target));

  ModelSpec spec = ModelSpec::preset(arch, o.preset == "desk" ? ScalePreset::Desk : ScalePreset::Paper);
  spec.in_channels = cases.front().channels;
  spec.num_classes = cases.front().num_labels();
  spec.validate();

  auto res = train_fold(spec, pre, split, o.fold, cfg, o.out, [&](const EpochLog& e) {
    *r.log << arch_name(arch) << " fold " << o.fold << " epoch " << e.epoch << " loss " << e.train_loss << " lr "
           << e.lr;
    if (e.val_soft_dice) *r.log << " val_soft_dice " << *e.val_soft_dice;
    *r.log << "\n";
  });

  json info = {{"name", arch_name(arch)},
               {"arch", arch_name(arch)},
               {"preset", o.preset},
               {"fold", o.fold},
               {"folds", o.folds},
               {"split_seed", o.seed},
               {"val_ids", split.fold_ids(o.fold)},
               {"train_ids", train_ids},
               {"target_spacing", target},
               {"class_names", cases.front().class_names},
               {"patch", cfg.patch},
               {"overlap", cfg.overlap},
               {"best_epoch", res.best_epoch}};
  write_json(o.out / "training.json", info);
  if (fs::exists(o.out / "best" / "model.json")) write_json(o.out / "best" / "training.json", info);

  r.manifest.resolved = {{"model", spec_to_json(spec)}, {"train", train_config_to_json(cfg)}, {"target_spacing", target},
                         {"fold_sizes", json::array()}};
  for (int f = 0; f < o.folds; ++f) r.manifest.resolved["fold_sizes"].push_back(split.fold_ids(f).size());
  r.manifest.seeds = {{"seed", o.seed},
                      {"init", derive_seed(o.seed, "init." + arch_name(arch))},
                      {"attention", derive_seed(o.seed, "attention")},
                      {"data", derive_seed(o.seed, "data")},
                      {"folds", derive_seed(o.seed, "folds")}};
}

struct InferOpts {
  fs::path model, data, out;
  std::string name;
  bool all = false, deterministic = false;
  int workers = 0;
};

void cmd_infer(const InferOpts& o, Run& r) {
  const Member m = load_member(o.model);
  const std::string name = o.name.empty() ? member_name(m) : o.name;
  const auto index = read_dataset_index(o.data);
  const auto sw = window_for(m.info, o.workers, o.deterministic);
  const int fold = m.info.value("fold", 0);
  std::map<std::string, int> done;
  for (const auto& id : index.ids) {
    if (!o.all && !m.held_out.empty() && !m.held_out.count(id)) continue;
    write_probs(predict_with(m, read_case(o.data / id), sw), o.out / id);
    done[id] = fold;
    *r.log << name << " predicted " << id << "\n";
  }
  if (done.empty()) throw ValidationError("no cases of " + o.data.string() + " selected for inference");
  write_predictions_index(o.out, name, done, {{"source", fs::absolute(o.model).lexically_normal().string()}});
  r.manifest.resolved = {{"name", name}, {"patch", sw.patch}, {"overlap", sw.overlap}, {"workers", worker_count(sw.workers)},
                         {"training", m.info}};
}

// Members grouped by model name; a case is predicted by the group member that held it out.
struct Group {
  std::string name;
  std::vector<Member> members;
  const Member& for_case(const std::string& id) const {
    for (const auto& m : members)
      if (m.held_out.count(id)) return m;
    if (members.size() == 1) return members.front();
    throw ValidationError("no member of " + name + " held out case " + id);
  }
};

std::vector<Group> group_members(const std::vector<fs::path>& dirs) {
  std::vector<Group> groups;
  for (const auto& d : dirs) {
    Member m = load_member(d);
    const std::string n = member_name(m);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.name == n; });
    if (it == groups.end()) {
      groups.push_back({n, {}});
      it = groups.end() - 1;
    }
    it->members.push_back(std::move(m));
  }
  return groups;
}

int fold_of(const Group& g, const std::string& id) { return g.for_case(id).info.value("fold", 0); }

std::vector<std::string> covered_cases(const std::vector<Group>& groups, const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  for (const auto& id : ids) {
    bool ok = true;
    for (const auto& g : groups) {
      bool has = g.members.size() == 1 && g.members.front().held_out.empty();
      for (const auto& m : g.members) has = has || m.held_out.count(id);
      ok = ok && has;
    }
    if (ok) out.push_back(id);
  }
  return out;
}

struct EnsembleOpts {
  std::vector<fs::path> members;
  std::vector<double> weights;
  fs::path data, out;
  std::string name;
  bool all = false, deterministic = false;
  int workers = 0;
};

void cmd_ensemble(const EnsembleOpts& o, Run& r) {
  const auto index = read_dataset_index(o.data);
  json listing = json::array();
  std::map<std::string, int> done;
  std::string name = o.name;
  if (o.all) {
    // every checkpoint is a member, all cases predicted
    std::vector<Member> ms;
    for (const auto& d : o.members) ms.push_back(load_member(d));
    if (!o.weights.empty() && o.weights.size() != ms.size()) throw ValidationError("need one weight per member");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      listing.push_back({{"checkpoint", fs::absolute(ms[i].dir).lexically_normal().string()},
                         {"weight", o.weights.empty() ? 1.0 : o.weights[i]}});
      if (name.empty()) name = member_name(ms[i]);
      else if (o.name.empty()) name += "+" + member_name(ms[i]);
    }
    for (const auto& id : index.ids) {
      const auto c = read_case(o.data / id);
      std::vector<ProbabilityVolume> vols;
      for (const auto& m : ms) vols.push_back(predict_with(m, c, window_for(m.info, o.workers, o.deterministic)));
      write_probs(ensemble_average(vols, o.weights), o.out / id);
      done[id] = 0;
    }
  } else {
    const auto groups = group_members(o.members);
    if (!o.weights.empty() && o.weights.size() != groups.size()) throw ValidationError("need one weight per model");
    for (std::size_t i = 0; i < groups.size(); ++i) {
      json paths = json::array();
      for (const auto& m : groups[i].members) paths.push_back(fs::absolute(m.dir).lexically_normal().string());
      listing.push_back({{"model", groups[i].name}, {"checkpoints", paths},
                         {"weight", o.weights.empty() ? 1.0 : o.weights[i]}});
      if (o.name.empty()) name += (i ? "+" : "") + groups[i].name;
    }
    for (const auto& id : covered_cases(groups, index.ids)) {
      const auto c = read_case(o.data / id);
      std::vector<ProbabilityVolume> vols;
      for (const auto& g : groups) {
        const auto& m = g.for_case(id);
        vols.push_back(predict_with(m, c, window_for(m.info, o.workers, o.deterministic)));
      }
      write_probs(ensemble_average(vols, o.weights), o.out / id);
      done[id] = fold_of(groups.front(), id);
    }
  }
  if (done.empty()) throw ValidationError("no case is held out by every ensemble member");
  write_predictions_index(o.out, name, done, json::object());
  write_json(o.out / "ensemble.json", {{"name", name}, {"mode", o.all ? "all" : "cross_validation"}, {"members", listing}});
  r.manifest.resolved = {{"name", name}, {"members", listing}};
  *r.log << "ensemble " << name << " predicted " << done.size() << " cases\n";
}

struct SweepOpts {
  std::vector<fs::path> members;
  int min_size = 2;
  fs::path data, out;
  bool deterministic = false;
  int workers = 0;
};

void cmd_sweep(const SweepOpts& o, Run& r) {
  const auto index = read_dataset_index(o.data);
  // checkpoints first run held-out inference once per model, prediction directories are used as they are
  std::vector<fs::path> ckpts, pred_dirs;
  for (const auto& m : o.members) (fs::exists(m / "predictions.json") ? pred_dirs : ckpts).push_back(m);
  if (!ckpts.empty()) {
    for (const auto& g : group_members(ckpts)) {
      const fs::path dir = o.out / "members" / g.name;
      std::map<std::string, int> done;
      for (const auto& id : covered_cases({g}, index.ids)) {
        const auto& m = g.for_case(id);
        write_probs(predict_with(m, read_case(o.data / id), window_for(m.info, o.workers, o.deterministic)), dir / id);
        done[id] = m.info.value("fold", 0);
      }
      write_predictions_index(dir, g.name, done, json::object());
      pred_dirs.push_back(dir);
      *r.log << "predicted held-out cases for " << g.name << "\n";
    }
  }
  const auto models = read_prediction_dirs(pred_dirs);
  const auto ids = common_cases(models);
  const int n = static_cast<int>(models.size());
  if (n < o.min_size) throw ValidationError("fewer models than --min-size");
  const auto subsets = enumerate_subsets(n, 1);
  auto subset_name = [&](const std::vector<int>& s) {
    std::string out;
    for (int i : s) out += (out.empty() ? "" : "+") + models[i].name;
    return out;
  };

  std::vector<MetricEntry> entries;
  for (const auto& id : ids) {
    const auto ref = read_case(o.data / id);
    std::vector<ProbabilityVolume> vols;
    for (const auto& m : models) vols.push_back(read_probs(m.dir.at(id)));
    const int fold = models.front().fold.at(id);
    for (const auto& s : subsets) {
      std::vector<ProbabilityVolume> pick;
      for (int i : s) pick.push_back(vols[i]);
      const auto e = score_case(subset_name(s), fold, hard_labels(s.size() == 1 ? vols[s[0]] : ensemble_average(pick)), ref);
      entries.insert(entries.end(), e.begin(), e.end());
    }
  }
  write_metrics_csv(o.out / "metrics.csv", entries);

  struct Ranked {
    std::string name;
    std::size_t size;
    MeanStd avg;
    std::size_t order;
  };
  std::vector<Ranked> singles, ensembles;
  std::map<std::string, AggregateReport> dice_by, hd_by;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const auto nm = subset_name(subsets[i]);
    const auto mine = filter_model(entries, nm);
    dice_by[nm] = aggregate(mine, Metric::Dice, index.class_names);
    hd_by[nm] = aggregate(mine, Metric::HD95, index.class_names);
    Ranked rk{nm, subsets[i].size(), dice_by[nm].avg, i};
    if (subsets[i].size() == 1) singles.push_back(rk);
    if (static_cast<int>(subsets[i].size()) >= o.min_size) ensembles.push_back(rk);
  }
  auto by_avg = [](const Ranked& a, const Ranked& b) {
    return a.avg.mean != b.avg.mean ? a.avg.mean > b.avg.mean : a.order < b.order;
  };
  std::sort(singles.begin(), singles.end(), by_avg);
  std::sort(ensembles.begin(), ensembles.end(), by_avg);

  auto ranking_csv = [](const std::vector<Ranked>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "rank,size,members,avg_dice_mean,avg_dice_std\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      os << i + 1 << ',' << rows[i].size << ',' << rows[i].name << ',' << rows[i].avg.mean << ',' << rows[i].avg.std << '\n';
    return os.str();
  };
  write_text(o.out / "ranking.csv", ranking_csv(ensembles));
  write_text(o.out / "singles.csv", ranking_csv(singles));

  std::vector<std::pair<std::string, AggregateReport>> dice_rows, hd_rows;
  for (const auto& m : models) {
    dice_rows.push_back({m.name, dice_by[m.name]});
    hd_rows.push_back({m.name, hd_by[m.name]});
  }
  const auto& best = ensembles.front();
  const auto& best_single = singles.front();
  dice_rows.push_back({"Ensemble " + best.name, dice_by[best.name]});
  hd_rows.push_back({"Ensemble " + best.name, hd_by[best.name]});
  write_json(o.out / "aggregate.json", class_reports(dice_rows, hd_rows));
  std::string md = render_class_table("Dice", dice_rows, 3) + "\n" + render_class_table("HD95 (mm)", hd_rows, 2) +
                   "\n### Top ensembles\n\n| Rank | Members | Avg Dice |\n|---|---|---|\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(10, ensembles.size()); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", ensembles[i].avg.mean, ensembles[i].avg.std);
    md += "| " + std::to_string(i + 1) + " | " + ensembles[i].name + " | " + buf + " |\n";
  }
  write_text(o.out / "report.md", md);
  const json summary = {{"models", json::array()},
                        {"evaluated_subsets", ensembles.size()},
                        {"min_size", o.min_size},
                        {"best_ensemble", {{"members", best.name}, {"avg_dice", best.avg.mean}, {"avg_dice_std", best.avg.std}}},
                        {"best_single", {{"model", best_single.name}, {"avg_dice", best_single.avg.mean},
                                         {"avg_dice_std", best_single.avg.std}}},
                        {"ensemble_at_least_single", best.avg.mean >= best_single.avg.mean}};
  json s = summary;
  for (const auto& m : models) s["models"].push_back(m.name);
  write_json(o.out / "best.json", s);
  r.manifest.resolved = {{"models", s["models"]}, {"min_size", o.min_size}, {"subsets", ensembles.size()}};
  *r.log << "evaluated " << ensembles.size() << " ensembles; best " << best.name << " avg dice " << best.avg.mean
         << "; best single " << best_single.name << " " << best_single.avg.mean << "\n";
}

struct EvalOpts {
  std::vector<fs::path> preds;
  fs::path refs, out;
};

void cmd_eval(const EvalOpts& o, Run& r) {
  const auto models = read_prediction_dirs(o.preds);
  const auto index = read_dataset_index(o.refs);
  std::vector<MetricEntry> all;
  std::vector<std::pair<std::string, AggregateReport>> dice_rows, hd_rows;
  for (const auto& m : models) {
    const auto e = evaluate_model(m, o.refs);
    all.insert(all.end(), e.begin(), e.end());
    dice_rows.push_back({m.name, aggregate(e, Metric::Dice, index.class_names)});
    hd_rows.push_back({m.name, aggregate(e, Metric::HD95, index.class_names)});
  }
  write_metrics_csv(o.out / "metrics.csv", all);
  write_json(o.out / "aggregate.json", class_reports(dice_rows, hd_rows));
  write_text(o.out / "report.md", render_class_table("Dice", dice_rows, 3) + "\n" + render_class_table("HD95 (mm)", hd_rows, 2));
  for (const auto& [name, rep] : dice_rows) *r.log << name << " avg dice " << rep.avg.mean << " ± " << rep.avg.std << "\n";
}

struct PairwiseOpts {
  std::vector<fs::path> preds;
  fs::path out;
};

void cmd_pairwise(const PairwiseOpts& o, Run& r) {
  const auto models = read_prediction_dirs(o.preds);
  const auto ids = common_cases(models);
  if (models.size() < 2) throw ValidationError("pairwise needs at least two models");
  PredictionSet set;
  std::vector<std::string> class_names;
  for (const auto& m : models)
    for (const auto& id : ids) {
      const auto v = read_probs(m.dir.at(id));
      class_names = v.class_names;
      set[m.name][id] = hard_labels(v);
    }
  const auto mat = pairwise_model_dice(set, models.front().fold, class_names);
  write_text(o.out / "pairwise.csv", pairwise_csv(mat));
  write_json(o.out / "pairwise.json", pairwise_to_json(mat));
  write_text(o.out / "report.md", "### Pairwise Dice between models\n\n" + render_pairwise_table(mat, 3));
  *r.log << "pairwise dice over " << mat.models.size() << " models\n";
}

struct StatsOpts {
  std::vector<fs::path> metrics;
  std::string test = "wilcoxon", metric = "dice", model_a, model_b, mode = "auto";
  double alpha = 0.05;
  fs::path out;
};

// model -> patient -> mean over present classes
std::map<std::string, double> per_patient(const std::vector<MetricEntry>& entries, const std::string& model, Metric metric) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& e : entries) {
    if (e.model != model) continue;
    const auto& v = metric == Metric::Dice ? e.dice : e.hd95_mm;
    if (!v) continue;
    acc[e.patient].first += *v;
    acc[e.patient].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [p, s] : acc) out[p] = s.first / s.second;
  return out;
}

std::string only_model(const std::vector<MetricEntry>& entries, const std::string& requested, const fs::path& file) {
  if (!requested.empty()) return requested;
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.model);
  if (names.size() != 1) throw ValidationError(file.string() + " holds several models; pick one with --model-a/--model-b");
  return *names.begin();
}

void cmd_stats(const StatsOpts& o, Run& r) {
  if (o.test != "wilcoxon") throw ValidationError("unknown test '" + o.test + "' (wilcoxon)");
  if (o.metrics.size() != 2) throw ValidationError("stats needs exactly two metrics files");
  const Metric metric = o.metric == "dice" ? Metric::Dice : o.metric == "hd95" ? Metric::HD95 :
                        throw ValidationError("unknown metric '" + o.metric + "' (dice, hd95)");
  const WilcoxonMode mode = o.mode == "exact" ? WilcoxonMode::Exact : o.mode == "approx" ? WilcoxonMode::Approx :
                            o.mode == "auto" ? WilcoxonMode::Auto : throw ValidationError("unknown mode '" + o.mode + "'");
  const auto a = read_metrics_csv(o.metrics[0]), b = read_metrics_csv(o.metrics[1]);
  const std::string ma = only_model(a, o.model_a, o.metrics[0]), mb = only_model(b, o.model_b, o.metrics[1]);
  const auto pa = per_patient(a, ma, metric), pb = per_patient(b, mb, metric);
  std::vector<double> x, y;
  std::vector<std::string> patients;
  for (const auto& [p, v] : pa) {
    const auto it = pb.find(p);
    if (it == pb.end()) continue;
    patients.push_back(p);
    x.push_back(v);
    y.push_back(it->second);
  }
  const auto res = wilcoxon_signed_rank(x, y, mode);
  json j = wilcoxon_to_json(res, o.alpha);
  j["metric"] = o.metric;
  j["model_a"] = ma;
  j["model_b"] = mb;
  j["pairs"] = patients.size();
  j["unit"] = "per-patient mean over present classes";
  write_json(o.out / "stats.json", j);
  r.manifest.resolved = {{"mode", o.mode}, {"pairs", patients.size()}};
  *r.log << "wilcoxon " << ma << " vs " << mb << ": n " << res.n << " W " << res.statistic << " p " << res.p_two_sided
         << (res.p_two_sided < o.alpha ? " (significant)" : "") << "\n";
}

struct ParamsOpts {
  std::string arch = "all", preset = "paper";
  fs::path out;
};

void cmd_params(const ParamsOpts& o, Run& r) {
  const ScalePreset p = parse_preset(o.preset);
  std::vector<Arch> archs = o.arch == "all" ? all_archs() : std::vector<Arch>{parse_arch(o.arch)};
  std::vector<ParamRow> rows;
  for (Arch a : archs) {
    const auto m = build_model<float>(ModelSpec::preset(a, p), 0);
    const auto b = count_params(m);
    rows.push_back({arch_name(a), b.total, paper_param_count(a), b.modules, param_discrepancy_note(a, p)});
  }
  const auto table = render_params_table(rows, o.preset);
  *r.log << table;
  if (!o.out.empty()) {
    write_json(o.out / "params.json", params_to_json(rows, o.preset));
    write_text(o.out / "params.md", table);
  }
}

struct GradOpts {
  double tol = 1e-4;
  std::uint64_t seed = 0;
  fs::path out;
};

bool cmd_gradcheck(const GradOpts& o, Run& r) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto suite = run_gradient_suite(o.tol, o.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = true;
  json rows = json::array();
  for (const auto& e : suite) {
    ok = ok && e.pass;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s max_rel_err %.3e  elements %-5ld %s\n", e.name.c_str(), e.max_rel_err,
                  static_cast<long>(e.checked), e.pass ? "PASS" : "FAIL");
    *r.log << buf;
    rows.push_back({{"name", e.name}, {"max_rel_err", e.max_rel_err}, {"checked", e.checked}, {"pass", e.pass}});
  }
  *r.log << (ok ? "all " : "FAILED: not all ") << suite.size() << " gradient checks pass at tol " << o.tol << " in "
         << secs << " s\n";
  if (!o.out.empty()) write_json(o.out / "gradcheck.json", {{"tolerance", o.tol}, {"pass", ok}, {"checks", rows}});
  return ok;
}

struct VisOpts {
  std::vector<fs::path> preds;
  fs::path refs, out;
  int scale = 4;
};

constexpr std::uint8_t kPalette[][3] = {{0, 255, 0},   {255, 0, 0},   {0, 255, 255}, {255, 255, 0},
                                        {255, 0, 255}, {255, 128, 0}, {0, 96, 255},  {160, 64, 255}};

std::vector<std::uint8_t> overlay(const PatientCase& c, const std::vector<std::uint8_t>& labels, Index z, int scale) {
  const Index H = c.shape[1], W = c.shape[2];
  const float* img = c.image.data() + z * H * W;
  const auto [lo, hi] = std::minmax_element(img, img + H * W);
  const double span = *hi > *lo ? *hi - *lo : 1.0;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H * W * scale * scale * 3));
  for (Index y = 0; y < H * scale; ++y)
    for (Index x = 0; x < W * scale; ++x) {
      const Index s = (y / scale) * W + x / scale;
      const double g = 255.0 * (img[s] - *lo) / span;
      double px[3] = {g, g, g};
      const int lab = labels[z * H * W + s];
      if (lab > 0) {
        const auto* col = kPalette[(lab - 1) % 8];
        for (int k = 0; k < 3; ++k) px[k] = 0.45 * px[k] + 0.55 * col[k];
      }
      for (int k = 0; k < 3; ++k) rgb[(y * W * scale + x) * 3 + k] = static_cast<std::uint8_t>(std::lround(px[k]));
    }
  return rgb;
}

void cmd_visualize(const VisOpts& o, Run& r) {
  if (o.scale < 1 || o.scale > 16) throw ValidationError("--scale must lie in [1, 16]");
  const auto models = read_prediction_dirs(o.preds);
  const auto ids = common_cases(models);
  const auto index = read_dataset_index(o.refs);
  // per model, per fold Avg Dice, then the median fold
  std::vector<std::vector<double>> scores;
  std::map<std::string, std::vector<double>> patient_scores;
  std::vector<int> folds;
  for (const auto& m : models) {
    const auto e = evaluate_model(m, o.refs);
    const auto rep = aggregate(e, Metric::Dice, index.class_names);
    folds = rep.folds;
    std::vector<double> row;
    for (const auto& v : rep.fold_avg) row.push_back(v.value_or(0.0));
    scores.push_back(row);
    for (const auto& [p, v] : per_patient(e, m.name, Metric::Dice)) patient_scores[p].push_back(v);
  }
  const int fold = folds.at(static_cast<std::size_t>(median_fold_select(scores)));
  std::vector<std::pair<double, std::string>> in_fold;
  for (const auto& id : ids) {
    if (models.front().fold.at(id) != fold) continue;
    const auto& v = patient_scores[id];
    in_fold.push_back({v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()), id});
  }
  std::sort(in_fold.begin(), in_fold.end());
  const std::string patient = in_fold.at((in_fold.size() - 1) / 2).second;
  const auto ref = read_case(o.refs / patient);
  Index best_z = 0, best_fg = -1;
  for (Index z = 0; z < ref.shape[0]; ++z) {
    Index fg = 0;
    for (Index i = 0; i < ref.slice_pixels(); ++i) fg += ref.mask[z * ref.slice_pixels() + i] > 0;
    if (fg > best_fg) {
      best_fg = fg;
      best_z = z;
    }
  }
  const int w = static_cast<int>(ref.shape[2] * o.scale), h = static_cast<int>(ref.shape[1] * o.scale);
  std::vector<std::vector<std::uint8_t>> panels{overlay(ref, ref.mask, best_z, o.scale)};
  write_png_rgb(o.out / "reference.png", w, h, panels.back());
  for (const auto& m : models) {
    panels.push_back(overlay(ref, hard_labels(read_probs(m.dir.at(patient))).labels, best_z, o.scale));
    write_png_rgb(o.out / (m.name + ".png"), w, h, panels.back());
  }
  const int gap = 4, total_w = w * static_cast<int>(panels.size()) + gap * static_cast<int>(panels.size() - 1);
  std::vector<std::uint8_t> strip(static_cast<std::size_t>(total_w) * h * 3, 255);
  for (std::size_t p = 0; p < panels.size(); ++p)
    for (int y = 0; y < h; ++y)
      std::copy_n(panels[p].begin() + static_cast<std::ptrdiff_t>(y) * w * 3, w * 3,
                  strip.begin() + (static_cast<std::ptrdiff_t>(y) * total_w + static_cast<std::ptrdiff_t>(p) * (w + gap)) * 3);
  write_png_rgb(o.out / "overview.png", total_w, h, strip);
  json legend = json::array();
  for (std::size_t c = 0; c < index.class_names.size(); ++c) {
    const auto* col = kPalette[c % 8];
    legend.push_back({{"class", index.class_names[c]}, {"rgb", {col[0], col[1], col[2]}}});
  }
  json panel_names = {"reference"};
  for (const auto& m : models) panel_names.push_back(m.name);
  write_json(o.out / "visualize.json", {{"fold", fold}, {"fold_scores", scores}, {"patient", patient}, {"slice", best_z},
                                        {"panels", panel_names}, {"legend", legend}});
  *r.log << "median fold " << fold << ", patient " << patient << ", slice " << best_z << "\n";
}

// --- argument expansion ---------------------------------------------------------

std::vector<std::string> config_tokens(const json& flags, const std::set<std::string>& explicit_keys) {
  std::vector<std::string> out;
  for (const auto& [key, v] : flags.items()) {
    if (explicit_keys.count(key)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back("--" + key);
    } else if (v.is_array()) {
      if (v.empty()) continue;
      out.push_back("--" + key);
      for (const auto& e : v) out.push_back(e.is_string() ? e.get<std::string>() : e.dump());
    } else if (!v.is_null()) {
      out.push_back("--" + key);
      out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> expand_arguments(const std::vector<std::string>& in) {
  std::vector<std::string> args = in;
  if (!args.empty() && args[0] == "rerun") {
    std::string manifest, out;
    for (std::size_t i = 1; i < args.size(); ++i) {
      if ((args[i] == "--manifest" || args[i] == "--out") && i + 1 < args.size()) {
        (args[i] == "--manifest" ? manifest : out) = args[i + 1];
        ++i;
      } else if (args[i] != "-h" && args[i] != "--help") {
        throw ValidationError("rerun: unexpected argument " + args[i] + "\nusage: rerun --manifest FILE [--out DIR]");
      }
    }
    if (manifest.empty()) throw ValidationError("usage: rerun --manifest FILE [--out DIR]");
    args = {"--config", manifest};
    if (!out.empty()) args.insert(args.end(), {"--out", out});
  }
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ValidationError("--config needs a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return rest;
  const json j = read_json(*config);
  if (!j.is_object()) throw ValidationError(*config + ": config must be a JSON object");
  json flags = j;
  if (j.contains("command") && j.contains("config")) {
    flags = j["config"];
    const std::string cmd = j["command"].get<std::string>();
    if (rest.empty() || rest[0].rfind("-", 0) == 0) rest.insert(rest.begin(), cmd);
  }
  std::set<std::string> explicit_keys;
  for (const auto& a : rest)
    if (a.rfind("--", 0) == 0) explicit_keys.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  const auto extra = config_tokens(flags, explicit_keys);
  rest.insert(rest.end(), extra.begin(), extra.end());
  return rest;
}

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  try {
    args = expand_arguments(raw);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }

  CLI::App app{"Multi-organ segmentation: synthetic data, seven architectures, training, ensembling and evaluation",
               "oarseg"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());
  std::string config_unused;
  app.add_option("--config", config_unused, "JSON file (flag object or run manifest) supplying flag values");

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-organ phantom dataset");
  synth->add_option("--out", so.out, "Output dataset directory")->required();
  synth->add_option("--patients", so.patients, "Number of patients")->check(CLI::Range(1, 100000));
  synth->add_option("--classes", so.classes, "Organ classes (background excluded)")->check(CLI::Range(1, 254));
  synth->add_option("--seed", so.seed, "Seed");
  synth->add_option("--depth", so.depth, "Slices per volume")->check(CLI::PositiveNumber);
  synth->add_option("--height", so.height, "Slice height")->check(CLI::Range(24, 4096));
  synth->add_option("--width", so.width, "Slice width")->check(CLI::Range(24, 4096));

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Train one architecture on one cross-validation fold");
  train->add_option("--data", to.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--arch", to.arch, "unet, cunet, unetr, swin_unetr, msunetr, decepticonv, swinconvnet")->required();
  train->add_option("--preset", to.preset, "cervix, brain or desk")->check(CLI::IsMember({"cervix", "brain", "desk"}));
  train->add_option("--folds", to.folds, "Number of folds")->check(CLI::Range(2, 100));
  train->add_option("--fold", to.fold, "Held-out fold index");
  train->add_option("--out", to.out, "Output directory")->required();
  train->add_option("--seed", to.seed, "Seed for folds, initialization and sampling");
  train->add_option("--epochs", to.epochs, "Override the preset epoch count (0 = preset)");
  train->add_option("--iterations", to.iterations, "Steps per epoch (0 = one pass over training slices)");
  train->add_option("--batch", to.batch, "Override the preset batch size (0 = preset)");
  train->add_option("--patch", to.patch, "Override the preset square patch size (0 = preset)");
  train->add_option("--lr", to.lr, "Override the initial learning rate (0 = preset)");
  train->add_flag("--deterministic", to.deterministic, "Pin worker counts and ordering");

  InferOpts io;
  auto* infer = app.add_subcommand("infer", "Sliding-window prediction with one checkpoint");
  infer->add_option("--model", io.model, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--data", io.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--out", io.out, "Output directory")->required();
  infer->add_option("--name", io.name, "Model name in reports (default: architecture)");
  infer->add_option("--workers", io.workers, "Worker threads (0 = OARSEG_THREADS or hardware)");
  infer->add_flag("--all", io.all, "Predict every case, not just the held-out fold");
  infer->add_flag("--deterministic", io.deterministic, "Pin worker counts and ordering");

  EnsembleOpts eo;
  auto* ens = app.add_subcommand("ensemble", "Average member probabilities");
  ens->add_option("--members", eo.members, "Checkpoint directories")->required()->check(CLI::ExistingDirectory);
  ens->add_option("--weights", eo.weights, "Member weights (default equal)");
  ens->add_option("--data", eo.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ens->add_option("--out", eo.out, "Output directory")->required();
  ens->add_option("--name", eo.name, "Ensemble name in reports");
  ens->add_option("--workers", eo.workers, "Worker threads");
  ens->add_flag("--all", eo.all, "Treat every checkpoint as a member and predict every case");
  ens->add_flag("--deterministic", eo.deterministic, "Pin worker counts and ordering");

  SweepOpts wo;
  auto* sweep = app.add_subcommand("sweep-ensembles", "Evaluate every model subset and rank by Avg Dice");
  sweep->add_option("--members", wo.members, "Checkpoint or prediction directories")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--min-size", wo.min_size, "Smallest subset size")->check(CLI::Range(1, 24));
  sweep->add_option("--data", wo.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--out", wo.out, "Output directory")->required();
  sweep->add_option("--workers", wo.workers, "Worker threads");
  sweep->add_flag("--deterministic", wo.deterministic, "Pin worker counts and ordering");

  EvalOpts vo;
  auto* eval = app.add_subcommand("eval", "Dice and HD95 per patient and class, aggregated over folds");
  eval->add_option("--preds", vo.preds, "Prediction directories")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--refs", vo.refs, "Reference dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", vo.out, "Output directory")->required();

  PairwiseOpts po;
  auto* pair = app.add_subcommand("pairwise", "Mean Dice between the predictions of every model pair");
  pair->add_option("--preds", po.preds, "Prediction directories")->required()->check(CLI::ExistingDirectory);
  pair->add_option("--out", po.out, "Output directory")->required();

  StatsOpts sto;
  auto* stats = app.add_subcommand("stats", "Paired test between two metric sets");
  stats->add_option("--metrics", sto.metrics, "Two metrics.csv files")->required()->expected(2)->check(CLI::ExistingFile);
  stats->add_option("--test", sto.test, "wilcoxon");
  stats->add_option("--metric", sto.metric, "dice or hd95");
  stats->add_option("--model-a", sto.model_a, "Model within the first file");
  stats->add_option("--model-b", sto.model_b, "Model within the second file");
  stats->add_option("--mode", sto.mode, "auto, exact or approx");
  stats->add_option("--alpha", sto.alpha, "Significance level");
  stats->add_option("--out", sto.out, "Output directory")->required();

  ParamsOpts pao;
  auto* params = app.add_subcommand("params", "Parameter counts against Table 1");
  params->add_option("--arch", pao.arch, "Architecture or 'all'");
  params->add_option("--preset", pao.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  params->add_option("--out", pao.out, "Optional output directory");

  GradOpts go;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and block");
  grad->add_option("--tol", go.tol, "Relative error tolerance");
  grad->add_option("--seed", go.seed, "Seed");
  grad->add_option("--out", go.out, "Optional output directory");

  VisOpts viso;
  auto* vis = app.add_subcommand("visualize", "PNG overlays for the median fold");
  vis->add_option("--preds", viso.preds, "Prediction directories")->required()->check(CLI::ExistingDirectory);
  vis->add_option("--refs", viso.refs, "Reference dataset directory")->required()->check(CLI::ExistingDirectory);
  vis->add_option("--out", viso.out, "Output directory")->required();
  vis->add_option("--scale", viso.scale, "Pixel magnification");

  app.add_subcommand("rerun", "Repeat a run from its manifest: rerun --manifest FILE [--out DIR]")->allow_extras();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kValidation;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run r;
  r.log = &out;
  r.manifest.command = sub->get_name();
  r.manifest.config = dump_options(*sub);
  r.manifest.started_utc = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  try {
    const std::string c = sub->get_name();
    if (c == "synth") {
      r.out = so.out;
      cmd_synth(so, r);
    } else if (c == "train") {
      r.out = to.out;
      r.inputs = {to.data};
      r.manifest.deterministic = to.deterministic;
      cmd_train(to, r);
    } else if (c == "infer") {
      r.out = io.out;
      r.inputs = {io.model, io.data};
      r.manifest.deterministic = io.deterministic;
      cmd_infer(io, r);
    } else if (c == "ensemble") {
      r.out = eo.out;
      r.inputs = eo.members;
      r.inputs.push_back(eo.data);
      r.manifest.deterministic = eo.deterministic;
      cmd_ensemble(eo, r);
    } else if (c == "sweep-ensembles") {
      r.out = wo.out;
      r.inputs = wo.members;
      r.inputs.push_back(wo.data);
      r.manifest.deterministic = wo.deterministic;
      cmd_sweep(wo, r);
    } else if (c == "eval") {
      r.out = vo.out;
      r.inputs = vo.preds;
      r.inputs.push_back(vo.refs);
      cmd_eval(vo, r);
    } else if (c == "pairwise") {
      r.out = po.out;
      r.inputs = po.preds;
      cmd_pairwise(po, r);
    } else if (c == "stats") {
      r.out = sto.out;
      r.inputs = sto.metrics;
      cmd_stats(sto, r);
    } else if (c == "params") {
      r.out = pao.out;
      cmd_params(pao, r);
    } else if (c == "gradcheck") {
      r.out = go.out;
      if (!cmd_gradcheck(go, r)) code = kNumeric;
    } else if (c == "visualize") {
      r.out = viso.out;
      r.inputs = viso.preds;
      r.inputs.push_back(viso.refs);
      cmd_visualize(viso, r);
    } else {
      throw ValidationError("usage: rerun --manifest FILE [--out DIR]");
    }
    if (!r.out.empty()) {
      fs::create_directories(r.out);
      r.manifest.input_hash = input_hash(r.inputs);
      r.manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_manifest(r.out, r.manifest);
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  return code;
}

}  // namespace oarseg::cli
