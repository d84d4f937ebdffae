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


#include "oarseg/checkpoint.hpp"

#include "oarseg/io.hpp"

namespace oarseg {

using nlohmann::json;

nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"arch", arch_name(s.arch)},
          {"in_channels", s.in_channels},
          {"num_classes", s.num_classes},
          {"width_base", s.width_base},
          {"levels", s.levels},
          {"scale_preset", preset_name(s.scale_preset)},
          {"image_extent", s.image_extent},
          {"random_features", s.random_features},
          {"window", s.window},
          {"se_reduction", s.se_reduction},
          {"vit_dim", s.vit_dim},
          {"vit_layers", s.vit_layers},
          {"vit_feature", s.vit_feature}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec s = ModelSpec::preset(parse_arch(j.at("arch").get<std::string>()),
                                    parse_preset(j.value("scale_preset", std::string("paper"))));
    s.in_channels = j.value("in_channels", s.in_channels);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.width_base = j.value("width_base", s.width_base);
    s.levels = j.value("levels", s.levels);
    s.image_extent = j.value("image_extent", s.image_extent);
    s.random_features = j.value("random_features", s.random_features);
    s.window = j.value("window", s.window);
    s.se_reduction = j.value("se_reduction", s.se_reduction);
    s.vit_dim = j.value("vit_dim", s.vit_dim);
    s.vit_layers = j.value("vit_layers", s.vit_layers);
    s.vit_feature = j.value("vit_feature", s.vit_feature);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid model spec: ") + e.what());
  }
}

void save_checkpoint(const Model<float>& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  std::vector<float> blob;
  auto add = [&](const std::string& name, const std::string& role, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"role", role}, {"shape", t.shape()}, {"offset", blob.size() * 4}});
    blob.insert(blob.end(), t.data().begin(), t.data().end());
  };
  for (const auto& p : m.parameters()) add(p.name, "parameter", p.tensor);
  for (const auto& b : m.buffers()) add(b.name, "buffer", b.tensor);
  json h = {{"format", "oarseg-checkpoint-1"},
            {"spec", spec_to_json(m.spec())},
            {"seed", m.seed()},
            {"num_parameters", count_params(m).total},
            {"tensors", tensors}};
  write_json(dir / "model.json", h);
  write_f32le(dir / "model.bin", blob);
}

Model<float> load_checkpoint(const std::filesystem::path& dir) {
  const json h = read_json(dir / "model.json");
  ModelSpec spec;
  std::uint64_t seed = 0;
  try {
    spec = spec_from_json(h.at("spec"));
    seed = h.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError((dir / "model.json").string() + ": " + e.what());
  }
  auto m = build_model<float>(spec, seed);
  std::vector<std::pair<std::string, Tensor<float>>> slots;
  for (const auto& p : m.parameters()) slots.push_back({p.name, p.tensor});
  for (const auto& b : m.buffers()) slots.push_back({b.name, b.tensor});
  const auto& list = h.at("tensors");
  if (list.size() != slots.size()) throw ValidationError("checkpoint tensor count does not match the architecture");
  Index total = 0;
  for (const auto& t : slots) total += t.second.numel();
  const auto blob = read_f32le(dir / "model.bin", total);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& [name, t] = slots[i];
    const auto& e = list[i];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape()) {
      throw ValidationError("checkpoint tensor " + e.at("name").get<std::string>() + " does not match " + name);
    }
    const auto off = e.at("offset").get<std::size_t>() / 4;
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), t.numel(), t.data().begin());
  }
  m.eval();
  return m;
}

}  // namespace oarseg
