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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace oarseg {

void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p);
nlohmann::json read_json(const std::filesystem::path& p);
void write_json(const std::filesystem::path& p, const nlohmann::json& j);

// Little-endian float32 payloads; reads check the byte count.
void write_f32le(const std::filesystem::path& p, const std::vector<float>& v);
std::vector<float> read_f32le(const std::filesystem::path& p, std::int64_t expected_count);
void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& v);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p, std::int64_t expected_count);

std::string sha1_hex(const std::string& data);
std::string sha1_file(const std::filesystem::path& p);
// Hash over the relative paths and contents of every regular file below root, in sorted order.
std::string sha1_tree(const std::filesystem::path& root);

}  // namespace oarseg
