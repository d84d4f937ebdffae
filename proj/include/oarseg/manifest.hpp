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

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace oarseg {

inline constexpr const char* kManifestFile = "manifest.json";

// Content hash over the inputs in the order given (directories hashed as trees).
std::string input_hash(const std::vector<std::filesystem::path>& inputs);

// relative path -> sha1 of every artifact under `dir` except the manifest itself.
// Wall-clock columns of training logs are dropped before hashing.
nlohmann::json artifact_digest(const std::filesystem::path& dir);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();    // flag values as given or defaulted
  nlohmann::json resolved = nlohmann::json::object();  // every effective setting
  nlohmann::json seeds = nlohmann::json::object();
  std::string input_hash;
  bool deterministic = false;
  double wall_seconds = 0;
  std::string started_utc;
};

// Writes manifest.json with the artifact digest of `dir` filled in.
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

std::string tool_version();

}  // namespace oarseg
