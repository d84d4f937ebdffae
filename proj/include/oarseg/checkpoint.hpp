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

// model.json (spec, seed, tensor manifest) + model.bin (float32 little-endian).

#include <filesystem>

#include "json.hpp"
#include "oarseg/models.hpp"

namespace oarseg {

nlohmann::json spec_to_json(const ModelSpec& s);
ModelSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const Model<float>& m, const std::filesystem::path& dir);
Model<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace oarseg
