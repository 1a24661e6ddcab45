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

#include "grove/core_math.hpp"

#include <cstddef>
#include <map>
#include <vector>

namespace grove {

/// Partition of n experts into g contiguous groups of n/g members.
struct Grouping {
    std::size_t n = 0;
    std::size_t g = 0;

    std::size_t group_size() const { return n / g; }
    /// 0-based group of 0-based expert i.
    std::size_t group_of(std::size_t i) const { return i / (n / g); }
    /// Fewest distinct groups k selected experts can touch: ceil(k / (n/g)).
    std::size_t min_groups(std::size_t k) const;
    /// Most distinct groups k selected experts can touch: min(k, g).
    std::size_t max_groups(std::size_t k) const;

    void validate() const;
};

std::size_t group_of(std::size_t i, std::size_t n, std::size_t g);

/// Router with a single logit projection shared by the softmax and sigmoid heads.
struct Router {
    Matrix weight; // n x d

    std::size_t n_experts() const { return weight.rows(); }
    std::size_t dim() const { return weight.cols(); }
};

struct RoutingDecision {
    std::vector<std::size_t> selected; // ascending, k distinct entries
    Vector gate_weights;               // softmax scores at `selected`
    Vector logits;
    Vector sigmoid_scores;
    Vector softmax_scores;
    /// group -> lambda * sum of member gate weights, for every group touched.
    std::map<std::size_t, double> group_weights;

    std::size_t n_adjugate_evals() const { return group_weights.size(); }
};

Vector logits(const Router &router, std::span<const double> x);

/// Indices of the k largest scores + bias, ties broken by lowest index, returned ascending.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const double> bias,
                                     std::size_t k);

/// Decoupled routing: select by sigmoid(logits) + bias, weight by softmax(logits).
RoutingDecision route_logits(Vector logits, std::span<const double> bias, std::size_t k, double lambda,
                             const Grouping &grouping);

/// Decision for a selection fixed in advance; scores and weights are recomputed from
/// `logits`. Backward passes and finite-difference checks hold selection constant this way.
RoutingDecision decide_with_selection(Vector logits, std::vector<std::size_t> selected, double lambda,
                                      const Grouping &grouping);

RoutingDecision route(const Router &router, std::span<const double> bias, std::span<const double> x,
                      std::size_t k, double lambda, const Grouping &grouping);

} // namespace grove
