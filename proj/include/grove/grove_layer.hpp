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
#include "grove/routing.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace grove {

enum class LayerKind { plain, grove };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string &s);

/// Thrown for configuration values that break a structural constraint.
/// `field` names the offending key.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string &what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
    const std::string &field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Architecture hyperparameters. Defaults are the desk-scale layout:
/// 128 experts, top-8, 64 groups of two, adjugate width 8.
struct GroveConfig {
    std::size_t d = 32;  // feature dim
    std::size_t n = 128; // experts
    std::size_t k = 8;   // experts per token
    std::size_t g = 64;  // groups, one adjugate each
    std::size_t h = 8;   // adjugate intermediate dim
    std::size_t m = 48;  // expert intermediate dim
    double lambda = 0.05;
    double alpha = 0.001;
    double init_sigma = 0.006;
    std::uint64_t seed = 0;

    Grouping grouping() const { return {n, g}; }
    /// Plain layers only check d, n, k, m; grove layers also check g | n and 0 < lambda <= g/n.
    void validate(LayerKind kind) const;

    bool operator==(const GroveConfig &) const = default;
};

/// SwiGLU-style block: down * (silu(gate * x) .* (up * x)).
struct GatedFfn {
    Matrix gate; // hidden x d
    Matrix up;   // hidden x d
    Matrix down; // d x hidden

    std::size_t dim() const { return gate.cols(); }
    std::size_t hidden() const { return gate.rows(); }
    void check_shape(std::size_t d, std::size_t hidden) const;
    static GatedFfn zeros(std::size_t d, std::size_t hidden);

    bool operator==(const GatedFfn &) const = default;
};

using Expert = GatedFfn;
using AdjugateExpert = GatedFfn;

struct GroveLayer {
    LayerKind kind = LayerKind::grove;
    GroveConfig config;
    Router router;
    std::vector<Expert> experts;
    std::vector<AdjugateExpert> adjugates; // empty for plain layers
    Vector bias;                           // routing bias, selection only
    std::string origin = "init";           // "init" or "upcycled", kept in checkpoints

    bool is_grove() const { return kind == LayerKind::grove; }
    /// Checks config constraints and every tensor shape.
    void validate() const;

    /// Grouping used to aggregate gate weights; plain layers use singleton groups.
    Grouping grouping() const;
    double effective_lambda() const;
    RoutingDecision route(std::span<const double> x) const;
    /// Same as route() but with the expert selection pinned.
    RoutingDecision route_fixed(std::span<const double> x, std::vector<std::size_t> selected) const;
};

/// Layer output for a given decision: grove (dedup) for grove layers, plain MoE otherwise.
Vector layer_forward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision);

/// Random layer: fan-in scaled normal weights, zero bias.
GroveLayer init_layer(const GroveConfig &config, LayerKind kind, Rng &rng);

Vector expert_forward(const GatedFfn &e, std::span<const double> x);

/// Traditional top-k MoE output, adjugates ignored.
Vector moe_forward(const GroveLayer &layer, std::span<const double> x);
Vector moe_forward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision);

/// Reference semantics: one adjugate evaluation per selected expert.
Vector grove_forward_naive(const GroveLayer &layer, std::span<const double> x);
Vector grove_forward_naive(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision);

struct DedupStats {
    std::size_t n_adjugate_evals = 0;
    std::map<std::size_t, double> group_weights;
    std::vector<std::size_t> selected;

    bool operator==(const DedupStats &) const = default;
};

struct DedupOutput {
    Vector y;
    DedupStats stats;
};

/// Evaluates each touched adjugate once, scaled by its aggregated group weight.
DedupOutput grove_forward_dedup(const GroveLayer &layer, std::span<const double> x);
DedupOutput grove_forward_dedup(const GroveLayer &layer, std::span<const double> x,
                                const RoutingDecision &decision);

/// Gradients of <upstream, y> with the expert selection held fixed. Entries for
/// experts and adjugates that the token did not touch are exactly zero.
struct Gradients {
    Vector input;
    Matrix router;
    std::vector<GatedFfn> experts;
    std::vector<GatedFfn> adjugates;

    static Gradients zeros_like(const GroveLayer &layer);
};

Gradients grove_backward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision,
                         std::span<const double> upstream);
Gradients grove_backward(const GroveLayer &layer, std::span<const double> x, std::span<const double> upstream);

/// Adds the gradient of one token into `acc`, scaled by `scale`.
void accumulate_backward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision,
                         std::span<const double> upstream, Gradients &acc, double scale = 1.0);

enum class ForwardMode { naive, dedup };

struct BatchResult {
    std::vector<Vector> outputs;
    std::vector<DedupStats> stats;
    std::vector<RoutingDecision> decisions;
    Vector load; // mean per-token assignment vector, sums to 1
};

BatchResult batch_forward(const GroveLayer &layer, std::span<const Vector> tokens, ForwardMode mode);

} // namespace grove
