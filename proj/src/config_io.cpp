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

#include "grove/config_io.hpp"

#include "grove/checkpoint.hpp"

#include <fstream>

namespace grove {

using nlohmann::json;

json config_to_json(const GroveConfig &c) {
    return json{{"d", c.d},           {"n", c.n},         {"k", c.k},
                {"g", c.g},           {"h", c.h},         {"m", c.m},
                {"lambda", c.lambda}, {"alpha", c.alpha}, {"init_sigma", c.init_sigma},
                {"seed", c.seed}};
}

namespace {

std::size_t read_count(const json &v, const std::string &key) {
    if (!v.is_number_unsigned())
        throw ConfigError(key, "expected a non-negative integer");
    return v.get<std::size_t>();
}

double read_real(const json &v, const std::string &key) {
    if (!v.is_number())
        throw ConfigError(key, "expected a number");
    return v.get<double>();
}

} // namespace

GroveConfig config_from_json(const json &j, GroveConfig c) {
    if (!j.is_object())
        throw ConfigError("config", "expected a JSON object");
    for (const auto &[key, v] : j.items()) {
        if (key == "d")
            c.d = read_count(v, key);
        else if (key == "n")
            c.n = read_count(v, key);
        else if (key == "k")
            c.k = read_count(v, key);
        else if (key == "g")
            c.g = read_count(v, key);
        else if (key == "h")
            c.h = read_count(v, key);
        else if (key == "m")
            c.m = read_count(v, key);
        else if (key == "lambda")
            c.lambda = read_real(v, key);
        else if (key == "alpha")
            c.alpha = read_real(v, key);
        else if (key == "init_sigma")
            c.init_sigma = read_real(v, key);
        else if (key == "seed")
            c.seed = read_count(v, key);
        else
            throw ConfigError(key, "unknown config key");
    }
    return c;
}

LayerSpec layer_spec_from_json(const json &j, bool validate) {
    if (!j.is_object())
        throw ConfigError("config", "expected a JSON object");
    LayerSpec spec;
    json rest = j;
    if (auto it = rest.find("kind"); it != rest.end()) {
        if (!it->is_string())
            throw ConfigError("kind", "expected \"plain\" or \"grove\"");
        spec.kind = layer_kind_from_string(it->get<std::string>());
        rest.erase(it);
    }
    spec.config = config_from_json(rest);
    if (validate)
        spec.config.validate(spec.kind);
    return spec;
}

LayerSpec load_layer_spec(const std::filesystem::path &path, bool validate) {
    std::ifstream in(path);
    if (!in)
        throw CheckpointError(CheckpointErrc::io, "cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ConfigError("config", std::string("malformed JSON: ") + e.what());
    }
    return layer_spec_from_json(j, validate);
}

} // namespace grove
