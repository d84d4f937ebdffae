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


#include "oarseg/manifest.hpp"

#include <algorithm>
#include <sstream>

#include "oarseg/errors.hpp"
#include "oarseg/io.hpp"

namespace fs = std::filesystem;

namespace oarseg {

std::string tool_version() { return "oarseg " OARSEG_VERSION; }

std::string input_hash(const std::vector<fs::path>& inputs) {
  std::string all;
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw ValidationError("input not found: " + p.string());
    all += fs::is_directory(p) ? sha1_tree(p) : sha1_file(p);
    all += '\n';
  }
  return sha1_hex(all);
}

namespace {

std::string drop_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line, out;
  long drop = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      const auto it = std::find(cells.begin(), cells.end(), column);
      if (it != cells.end()) drop = it - cells.begin();
      header = false;
    }
    if (drop >= 0 && drop < static_cast<long>(cells.size())) cells.erase(cells.begin() + drop);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

}  // namespace

nlohmann::json artifact_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  nlohmann::json d = nlohmann::json::object();
  for (const auto& rel : files) {
    if (rel == kManifestFile) continue;
    if (rel.filename() == "train_log.csv") {
      d[rel.generic_string()] = sha1_hex(drop_column(read_text(dir / rel), "wall_seconds"));
    } else {
      d[rel.generic_string()] = sha1_file(dir / rel);
    }
  }
  return d;
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["tool_version"] = tool_version();
  j["deterministic"] = m.deterministic;
  j["config"] = m.config;
  j["resolved"] = m.resolved;
  j["seeds"] = m.seeds;
  j["input_hash"] = m.input_hash;
  j["outputs"] = artifact_digest(dir);
  j["wall_clock"] = {{"started_utc", m.started_utc}, {"seconds", m.wall_seconds}};
  write_json(dir / kManifestFile, j);
}

RunManifest read_manifest(const fs::path& path) {
  const auto j = read_json(path);
  if (!j.is_object() || !j.contains("command") || !j.contains("config")) {
    throw ValidationError(path.string() + " is not a run manifest");
  }
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.resolved = j.value("resolved", nlohmann::json::object());
  m.seeds = j.value("seeds", nlohmann::json::object());
  m.input_hash = j.value("input_hash", std::string());
  m.deterministic = j.value("deterministic", false);
  if (j.contains("wall_clock")) {
    m.wall_seconds = j["wall_clock"].value("seconds", 0.0);
    m.started_utc = j["wall_clock"].value("started_utc", std::string());
  }
  return m;
}

}  // namespace oarseg
