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

#include <functional>
#include <string>
#include <vector>

namespace grove {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor for the relative error |a - f| / max(|a|, |f|, floor).
    double floor = 1e-6;
    /// Entries sampled per tensor; 0 checks every entry.
    std::size_t max_entries_per_tensor = 0;
};

struct GroupError {
    std::string group; // "router", "experts.gate", ..., "input"
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GroupError> groups;
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    bool passed = false;
};

using BackwardFn = std::function<Gradients(const GroveLayer &, std::span<const double>, const RoutingDecision &,
                                           std::span<const double>)>;

/// Compares `backward` against central differences of <u, y(x)> with the
/// selection frozen, on `probes` random (x, u) pairs. Only tensors the token
/// touches are differenced; the rest must come back exactly zero.
GradCheckReport gradcheck(const GroveLayer &layer, std::size_t probes, Rng &rng, const GradCheckOptions &options = {},
                          const BackwardFn &backward = nullptr);

} // namespace grove
