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


#include "oarseg/io.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "oarseg/errors.hpp"

namespace oarseg {

namespace fs = std::filesystem;

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(p.string() + ": malformed JSON: " + e.what());
  }
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

namespace {

std::string read_payload(const fs::path& p, std::int64_t expected_bytes) {
  if (!fs::exists(p)) throw ValidationError("missing file " + p.string());
  const auto actual = static_cast<std::int64_t>(fs::file_size(p));
  if (actual != expected_bytes) {
    throw ValidationError(p.string() + ": size mismatch, expected " + std::to_string(expected_bytes) +
                          " bytes, found " + std::to_string(actual));
  }
  return read_text(p);
}

}  // namespace

void write_f32le(const fs::path& p, const std::vector<float>& v) {
  std::string buf(v.size() * 4, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_text(p, buf);
}

std::vector<float> read_f32le(const fs::path& p, std::int64_t expected_count) {
  const auto buf = read_payload(p, expected_count * 4);
  std::vector<float> v(static_cast<std::size_t>(expected_count));
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i * 4 + b])) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& v) {
  write_text(p, std::string(v.begin(), v.end()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p, std::int64_t expected_count) {
  const auto buf = read_payload(p, expected_count);
  return {buf.begin(), buf.end()};
}

std::string sha1_hex(const std::string& data) {
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), md);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : md) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

std::string sha1_file(const fs::path& p) { return sha1_hex(read_text(p)); }

std::string sha1_tree(const fs::path& root) {
  if (fs::is_regular_file(root)) return sha1_file(root);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, root).generic_string() + '\0' + sha1_file(f) + '\n';
  return sha1_hex(acc);
}

}  // namespace oarseg
