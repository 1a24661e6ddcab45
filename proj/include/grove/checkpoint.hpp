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

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace grove {

// Checkpoint container, little-endian throughout:
//
//   bytes [0, 9)     magic "GROVEMOE1"
//   bytes [9, 13)    header_len, uint32
//   next header_len  UTF-8 JSON header: kind, config, origin and a tensor table
//                    of {name, shape [rows, cols], dtype "f32"|"f64", offset}
//   remainder        payload; offsets are relative to its first byte and the
//                    tensors are packed back to back in table order
//
// Plain and Grove layers share the container; the header's "kind" tells them apart.

inline constexpr std::string_view kCheckpointMagic = "GROVEMOE1";

enum class CheckpointErrc {
    io = 1,
    bad_magic = 2,
    truncated_payload = 3,
    unknown_dtype = 4,
    bad_header = 5,
};

std::string_view to_string(CheckpointErrc code);

class CheckpointError : public std::runtime_error {
public:
    CheckpointError(CheckpointErrc code, const std::string &what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    CheckpointErrc code() const noexcept { return code_; }

private:
    CheckpointErrc code_;
};

enum class Dtype { f32, f64 };

std::vector<std::uint8_t> serialize(const GroveLayer &layer, Dtype dtype = Dtype::f64);
GroveLayer deserialize(std::span<const std::uint8_t> bytes);

void save(const GroveLayer &layer, const std::filesystem::path &path, Dtype dtype = Dtype::f64);
GroveLayer load(const std::filesystem::path &path);

struct UpcycleOptions {
    std::size_t g = 64;
    std::size_t h = 8;
    double lambda = 0.05;
    double init_sigma = 0.006;
    std::uint64_t seed = 0;
};

/// Builds a Grove layer that computes exactly what `moe` computes: router, bias and
/// experts are copied, each adjugate gets normal(0, init_sigma) gate/up projections
/// and a zero down projection.
GroveLayer upcycle(const GroveLayer &moe, const UpcycleOptions &options);

} // namespace grove
