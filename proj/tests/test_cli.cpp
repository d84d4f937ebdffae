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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oarseg/cli.hpp"
#include "oarseg/data.hpp"
#include "oarseg/inference.hpp"
#include "oarseg/io.hpp"
#include "oarseg/manifest.hpp"
#include "oarseg/metrics.hpp"

namespace fs = std::filesystem;

namespace oarseg {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("oarseg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Every artifact except the manifest, byte for byte.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != kManifestFile) m[fs::relative(e.path(), dir).string()] = sha1_file(e.path());
  return m;
}

TEST(Cli, ParamsReportCarriesTableOneAnchor) {
  const auto r = cli({"params", "--arch", "unet", "--preset", "paper"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("10,188,773 | 10,188,773"), std::string::npos) << r.out;
  const auto dir = scratch("params");
  ASSERT_EQ(cli({"params", "--arch", "cunet", "--preset", "desk", "--out", dir.string()}).code, 0);
  const auto j = read_json(dir / "params.json");
  EXPECT_EQ(j["architectures"][0]["table1"], 14605301);
  EXPECT_TRUE(fs::exists(dir / kManifestFile));
}

TEST(Cli, SynthTwiceIsByteIdentical) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  for (const auto& d : {a, b}) ASSERT_EQ(cli({"synth", "--out", d.string(), "--patients", "2", "--seed", "7", "--depth", "3", "--height", "32", "--width", "32"}).code, 0);
  EXPECT_EQ(artifacts(a), artifacts(b));
  EXPECT_EQ(read_json(a / kManifestFile)["outputs"], read_json(b / kManifestFile)["outputs"]);
  EXPECT_EQ(read_dataset_index(a).ids.size(), 2u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"bogus"}).code, 1);
  EXPECT_EQ(cli({"synth", "--out", "/tmp/x", "--unknown-flag"}).code, 1);
  const auto r = cli({"eval", "--preds", "/nonexistent/path", "--refs", "/tmp", "--out", "/tmp/x"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({"train", "--data", "/tmp", "--arch", "resnet", "--out", "/tmp/x"}).code, 1);
  EXPECT_EQ(cli({"gradcheck", "--tol", "1e-300"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"rerun"}).code, 1);
}

TEST(Cli, ConfigFileSuppliesFlagsAndCommandLineWins) {
  const auto dir = scratch("config");
  write_json(dir / "cfg.json", {{"patients", 3}, {"seed", 5}, {"depth", 2}, {"height", 24}, {"width", 24}, {"classes", 2}});
  ASSERT_EQ(cli({"synth", "--config", (dir / "cfg.json").string(), "--out", (dir / "d").string(), "--patients", "1"}).code, 0);
  const auto idx = read_dataset_index(dir / "d");
  EXPECT_EQ(idx.ids.size(), 1u);
  EXPECT_EQ(idx.class_names.size(), 2u);
  const auto m = read_manifest(dir / "d" / kManifestFile);
  EXPECT_EQ(m.config["seed"], "5");
  EXPECT_EQ(m.config["patients"], "1");
  const auto args = cli::expand_arguments({"rerun", "--manifest", (dir / "d" / kManifestFile).string(), "--out", "/tmp/y"});
  ASSERT_FALSE(args.empty());
  EXPECT_EQ(args[0], "synth");
}

// Seven fabricated prediction sets over a small dataset.
struct SweepFixture {
  fs::path root, data;
  std::vector<std::string> pred_dirs;
};

SweepFixture make_fixture(int models) {
  SweepFixture f;
  f.root = scratch("sweep");
  f.data = f.root / "data";
  const auto cases = synth_generate(6, 2, {2, 24, 24}, 3);
  write_dataset(cases, f.data);
  const auto split = make_folds(read_dataset_index(f.data).ids, 3, 0);
  for (int m = 0; m < models; ++m) {
    const auto dir = f.root / ("m" + std::to_string(m));
    nlohmann::json idx = {{"model", "model" + std::to_string(m)}, {"cases", nlohmann::json::array()}};
    Rng rng(100 + m);
    for (const auto& c : cases) {
      ProbabilityVolume v;
      v.id = c.id;
      v.classes = 3;
      v.shape = c.shape;
      v.spacing = c.spacing;
      v.class_names = c.class_names;
      const Index n = c.voxels();
      v.probs.assign(3 * n, 0.0f);
      for (Index i = 0; i < n; ++i) {
        // noisy one-hot of the reference
        double p[3];
        double s = 0;
        for (int k = 0; k < 3; ++k) s += p[k] = (k == c.mask[i] ? 1.0 : 0.0) + rng.uniform(0, 0.9);
        for (int k = 0; k < 3; ++k) v.probs[k * n + i] = static_cast<float>(p[k] / s);
      }
      write_probs(v, dir / c.id);
      idx["cases"].push_back({{"id", c.id}, {"fold", split.assignments.at(c.id)}});
    }
    write_json(dir / "predictions.json", idx);
    f.pred_dirs.push_back(dir.string());
  }
  return f;
}

TEST(Cli, SweepSevenModelsEvaluates120Subsets) {
  const auto f = make_fixture(7);
  std::vector<std::string> args{"sweep-ensembles", "--members"};
  args.insert(args.end(), f.pred_dirs.begin(), f.pred_dirs.end());
  args.insert(args.end(), {"--min-size", "2", "--data", f.data.string(), "--out", (f.root / "out").string()});
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(f.root / "out" / "ranking.csv");
  std::string line;
  int rows = -1;
  double prev = 2;
  while (std::getline(in, line)) {
    if (++rows == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    const double avg = std::stod(cells[3]);
    EXPECT_LE(avg, prev);
    prev = avg;
  }
  EXPECT_EQ(rows, 120);
  const auto best = read_json(f.root / "out" / "best.json");
  EXPECT_EQ(best["evaluated_subsets"], 120);
  // noisy independent members: averaging can only help here
  EXPECT_TRUE(best["ensemble_at_least_single"].get<bool>());
}

TEST(Cli, EvalThenStatsOnIdenticalSetsGivesPOne) {
  const auto f = make_fixture(2);
  const auto ev = (f.root / "eval").string();
  ASSERT_EQ(cli({"eval", "--preds", f.pred_dirs[0], "--refs", f.data.string(), "--out", ev}).code, 0);
  const auto m = (fs::path(ev) / "metrics.csv").string();
  ASSERT_EQ(cli({"stats", "--metrics", m, m, "--test", "wilcoxon", "--out", (f.root / "st").string()}).code, 0);
  const auto s = read_json(f.root / "st" / "stats.json");
  EXPECT_EQ(s["p_two_sided"], 1.0);
  EXPECT_TRUE(s["degenerate"].get<bool>());
  EXPECT_FALSE(s["significant"].get<bool>());
  const auto agg = read_json(f.root / "eval" / "aggregate.json");
  EXPECT_TRUE(agg.contains("model0"));
  EXPECT_EQ(agg["model0"]["dice"]["per_class"].size(), 2u);
}

TEST(Cli, PairwiseAndVisualize) {
  const auto f = make_fixture(3);
  std::vector<std::string> args{"pairwise", "--preds"};
  args.insert(args.end(), f.pred_dirs.begin(), f.pred_dirs.end());
  args.insert(args.end(), {"--out", (f.root / "pw").string()});
  ASSERT_EQ(cli(args).code, 0);
  const auto pw = read_json(f.root / "pw" / "pairwise.json");
  ASSERT_EQ(pw["models"].size(), 3u);
  EXPECT_TRUE(pw["cells"][0][0].is_null());
  EXPECT_EQ(pw["cells"][0][1], pw["cells"][1][0]);
  args = {"visualize", "--preds"};
  args.insert(args.end(), f.pred_dirs.begin(), f.pred_dirs.end());
  args.insert(args.end(), {"--refs", f.data.string(), "--out", (f.root / "vis").string(), "--scale", "2"});
  ASSERT_EQ(cli(args).code, 0);
  for (const char* png : {"reference.png", "model0.png", "overview.png"}) {
    const auto bytes = read_text(f.root / "vis" / png);
    ASSERT_GT(bytes.size(), 8u);
    EXPECT_EQ(bytes.substr(1, 3), "PNG");
  }
  const auto v = read_json(f.root / "vis" / "visualize.json");
  EXPECT_EQ(v["legend"][0]["rgb"], (nlohmann::json{0, 255, 0}));
  EXPECT_EQ(v["legend"][1]["rgb"], (nlohmann::json{255, 0, 0}));
}

TEST(Cli, TrainInferEnsembleRerunReproduces) {
  const auto root = scratch("pipeline");
  const auto data = (root / "data").string();
  ASSERT_EQ(cli({"synth", "--out", data, "--patients", "4", "--classes", "2", "--depth", "3", "--height", "32", "--width", "32"}).code, 0);
  std::vector<std::string> ckpts;
  for (int fold = 0; fold < 2; ++fold) {
    const auto out = (root / ("unet" + std::to_string(fold))).string();
    const auto r = cli({"train", "--data", data, "--arch", "unet", "--preset", "desk", "--folds", "2", "--fold",
                        std::to_string(fold), "--out", out, "--epochs", "1", "--iterations", "3", "--patch", "32",
                        "--deterministic"});
    ASSERT_EQ(r.code, 0) << r.err;
    ckpts.push_back(out);
  }
  ASSERT_EQ(cli({"infer", "--model", ckpts[0], "--data", data, "--out", (root / "p0").string(), "--deterministic"}).code, 0);
  const auto preds = read_json(root / "p0" / "predictions.json");
  EXPECT_EQ(preds["cases"].size(), 2u);
  const auto vol = read_probs(root / "p0" / preds["cases"][0]["id"].get<std::string>());
  EXPECT_EQ(vol.shape, read_case(fs::path(data) / vol.id).shape);
  ASSERT_EQ(cli({"ensemble", "--members", ckpts[0], ckpts[1], "--data", data, "--out", (root / "ens").string(), "--all",
                 "--deterministic"}).code, 0);
  EXPECT_EQ(read_json(root / "ens" / "ensemble.json")["members"].size(), 2u);

  for (const char* dir : {"unet0", "p0", "ens"}) {
    const auto again = (root / (std::string(dir) + "_again")).string();
    const auto r = cli({"rerun", "--manifest", (root / dir / kManifestFile).string(), "--out", again});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_json(root / dir / kManifestFile)["outputs"], read_json(fs::path(again) / kManifestFile)["outputs"]) << dir;
    auto a = artifacts(root / dir), b = artifacts(again);
    a.erase("train_log.csv");
    b.erase("train_log.csv");
    EXPECT_EQ(a, b) << dir;
  }
}

TEST(Manifest, DigestIgnoresWallClockColumn) {
  const auto d = scratch("digest");
  write_text(d / "train_log.csv", "epoch,step,lr,train_loss,val_soft_dice,wall_seconds\n0,1,0.1,0.5,,1.25\n");
  const auto a = artifact_digest(d);
  write_text(d / "train_log.csv", "epoch,step,lr,train_loss,val_soft_dice,wall_seconds\n0,1,0.1,0.5,,9.75\n");
  EXPECT_EQ(artifact_digest(d), a);
  write_text(d / "train_log.csv", "epoch,step,lr,train_loss,val_soft_dice,wall_seconds\n0,1,0.1,0.6,,9.75\n");
  EXPECT_NE(artifact_digest(d), a);
}

}  // namespace
}  // namespace oarseg
