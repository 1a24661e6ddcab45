// Copyright 2026 The Grove MoE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "grove/grove_layer.hpp"

#include <filesystem>
#include <string>

#include <json.hpp>

namespace grove {

/// A config file: the layer kind plus its hyperparameters.
struct LayerSpec {
    LayerKind kind = LayerKind::grove;
    GroveConfig config;
};

nlohmann::json config_to_json(const GroveConfig &config);

/// Applies the keys present in `j` on top of `base`. Unknown keys and
/// wrongly-typed values raise ConfigError naming the key.
GroveConfig config_from_json(const nlohmann::json &j, GroveConfig base = {});

/// Reads a JSON config file. Accepted keys: kind, d, n, k, g, h, m, lambda,
/// alpha, init_sigma, seed. Missing keys keep the desk-scale defaults.
/// When `validate` is set the result is checked against its kind's constraints.
LayerSpec load_layer_spec(const std::filesystem::path &path, bool validate = true);
LayerSpec layer_spec_from_json(const nlohmann::json &j, bool validate = true);

} // namespace grove
