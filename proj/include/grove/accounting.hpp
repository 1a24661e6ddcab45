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
#include <functional>
#include <map>
#include <ostream>
#include <vector>

namespace grove {

// Parameter and FLOP accounting for one Grove layer.
//
// Counts cover the gated FFN weights only (gate + up + down). The router is
// reported separately and never folded into the active totals. FLOPs follow
// the 2-ops-per-multiply-accumulate convention with activations ignored.

struct ConditionalParams {
    std::uint64_t per_expert = 0;    // 3 * d * m
    std::uint64_t per_adjugate = 0;  // 3 * d * h
    std::uint64_t router = 0;        // n * d
};

ConditionalParams conditional_params(const GroveConfig &config);

/// Inclusive range [ceil(k / (n/g)), min(k, g)] of adjugates a token can touch.
struct AdjugateBound {
    std::size_t lo = 0;
    std::size_t hi = 0;

    bool contains(std::size_t count) const { return count >= lo && count <= hi; }
};

AdjugateBound adjugate_eval_bound(const GroveConfig &config);

/// k * per_expert + evals * per_adjugate. Throws std::out_of_range outside the bound.
std::uint64_t active_params(const GroveConfig &config, std::size_t n_adjugate_evals);

/// 2 * active_params.
std::uint64_t flops_per_token(const GroveConfig &config, std::size_t n_adjugate_evals);

/// Expected distinct groups hit by k experts drawn uniformly without replacement:
/// g * (1 - C(n - n/g, k) / C(n, k)).
double expected_distinct_groups(std::size_t n, std::size_t g, std::size_t k);

struct ActivationReport {
    std::uint64_t min_active_params = 0;
    std::uint64_t max_active_params = 0;
    std::uint64_t router_params = 0;
    std::vector<std::uint64_t> observed_active_params; // per token
    double mean_active_params = 0.0;
    double mean_adjugate_evals = 0.0;
    std::map<std::size_t, std::uint64_t> eval_histogram; // count -> tokens
    std::uint64_t samples = 0;
    std::uint64_t bound_violations = 0;

    /// Merges another shard; histograms add, means are re-weighted by samples.
    void merge(const ActivationReport &other);
    /// 1 - mean_adjugate_evals / k: share of per-expert adjugate work avoided by dedup.
    double adjugate_saving(std::size_t k) const;
};

ActivationReport make_report(const GroveConfig &config);
void record_token(ActivationReport &report, const GroveConfig &config, std::size_t n_adjugate_evals);

using TokenStream = std::function<Vector(Rng &)>;

/// Standard-normal feature vectors of length d.
TokenStream gaussian_tokens(std::size_t d);

/// Routes `samples` tokens through `layer` (dedup path) and tallies adjugate evals.
ActivationReport routing_histogram(const GroveLayer &layer, const TokenStream &stream, std::size_t samples,
                                   Rng &rng);

void write_report_json(std::ostream &os, const ActivationReport &report, const GroveConfig &config);
void write_histogram_csv(std::ostream &os, const ActivationReport &report);

} // namespace grove
