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

#include "grove/accounting.hpp"

#include "grove/config_io.hpp"

#include <fmt/format.h>

namespace grove {

ConditionalParams conditional_params(const GroveConfig &c) {
    ConditionalParams p;
    p.per_expert = 3ULL * c.d * c.m;
    p.per_adjugate = 3ULL * c.d * c.h;
    p.router = static_cast<std::uint64_t>(c.n) * c.d;
    return p;
}

AdjugateBound adjugate_eval_bound(const GroveConfig &c) {
    const Grouping grouping = c.grouping();
    grouping.validate();
    return {grouping.min_groups(c.k), grouping.max_groups(c.k)};
}

std::uint64_t active_params(const GroveConfig &c, std::size_t n_adjugate_evals) {
    const AdjugateBound bound = adjugate_eval_bound(c);
    if (!bound.contains(n_adjugate_evals))
        throw std::out_of_range(fmt::format("adjugate eval count {} outside [{}, {}]", n_adjugate_evals, bound.lo,
                                            bound.hi));
    const ConditionalParams p = conditional_params(c);
    return c.k * p.per_expert + n_adjugate_evals * p.per_adjugate;
}

std::uint64_t flops_per_token(const GroveConfig &c, std::size_t n_adjugate_evals) {
    return 2 * active_params(c, n_adjugate_evals);
}

double expected_distinct_groups(std::size_t n, std::size_t g, std::size_t k) {
    const Grouping grouping{n, g};
    grouping.validate();
    if (k > n)
        throw std::out_of_range("expected_distinct_groups: k > n");
    // C(n - s, k) / C(n, k) = prod_{i<k} (n - s - i) / (n - i): probability a given group is missed.
    const std::size_t s = grouping.group_size();
    double miss = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (n - i <= s) {
            miss = 0.0;
            break;
        }
        miss *= static_cast<double>(n - s - i) / static_cast<double>(n - i);
    }
    return static_cast<double>(g) * (1.0 - miss);
}

void ActivationReport::merge(const ActivationReport &other) {
    const std::uint64_t total = samples + other.samples;
    if (total == 0)
        return;
    const auto w = [&](double a, std::uint64_t na, double b, std::uint64_t nb) {
        return (a * static_cast<double>(na) + b * static_cast<double>(nb)) / static_cast<double>(total);
    };
    mean_active_params = w(mean_active_params, samples, other.mean_active_params, other.samples);
    mean_adjugate_evals = w(mean_adjugate_evals, samples, other.mean_adjugate_evals, other.samples);
    observed_active_params.insert(observed_active_params.end(), other.observed_active_params.begin(),
                                  other.observed_active_params.end());
    for (const auto &[count, tokens] : other.eval_histogram)
        eval_histogram[count] += tokens;
    bound_violations += other.bound_violations;
    samples = total;
}

double ActivationReport::adjugate_saving(std::size_t k) const {
    return 1.0 - mean_adjugate_evals / static_cast<double>(k);
}

ActivationReport make_report(const GroveConfig &c) {
    const AdjugateBound bound = adjugate_eval_bound(c);
    ActivationReport r;
    r.min_active_params = active_params(c, bound.lo);
    r.max_active_params = active_params(c, bound.hi);
    r.router_params = conditional_params(c).router;
    return r;
}

void record_token(ActivationReport &r, const GroveConfig &c, std::size_t n_adjugate_evals) {
    const AdjugateBound bound = adjugate_eval_bound(c);
    const ConditionalParams p = conditional_params(c);
    if (!bound.contains(n_adjugate_evals))
        ++r.bound_violations;
    const std::uint64_t active = c.k * p.per_expert + n_adjugate_evals * p.per_adjugate;
    r.observed_active_params.push_back(active);
    ++r.eval_histogram[n_adjugate_evals];
    ++r.samples;
    const double inv = 1.0 / static_cast<double>(r.samples);
    r.mean_active_params += (static_cast<double>(active) - r.mean_active_params) * inv;
    r.mean_adjugate_evals += (static_cast<double>(n_adjugate_evals) - r.mean_adjugate_evals) * inv;
}

TokenStream gaussian_tokens(std::size_t d) {
    return [d](Rng &rng) { return normal_vector(rng, d); };
}

ActivationReport routing_histogram(const GroveLayer &layer, const TokenStream &stream, std::size_t samples,
                                   Rng &rng) {
    if (samples < 1)
        throw std::invalid_argument("routing_histogram: samples must be >= 1");
    if (!layer.is_grove())
        throw std::invalid_argument("routing_histogram: layer has no adjugate experts");
    ActivationReport r = make_report(layer.config);
    r.observed_active_params.reserve(samples);
    for (std::size_t t = 0; t < samples; ++t) {
        const Vector x = stream(rng);
        // The dedup path evaluates exactly one adjugate per touched group.
        record_token(r, layer.config, layer.route(x).n_adjugate_evals());
    }
    return r;
}

void write_report_json(std::ostream &os, const ActivationReport &r, const GroveConfig &c) {
    const AdjugateBound bound = adjugate_eval_bound(c);
    const ConditionalParams p = conditional_params(c);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto &[count, tokens] : r.eval_histogram)
        hist.push_back({{"n_adjugate_evals", count},
                        {"count", tokens},
                        {"frequency", static_cast<double>(tokens) / static_cast<double>(r.samples)}});
    const double expected = expected_distinct_groups(c.n, c.g, c.k);
    nlohmann::json j{
        {"config", config_to_json(c)},
        {"samples", r.samples},
        {"per_expert_params", p.per_expert},
        {"per_adjugate_params", p.per_adjugate},
        {"router_params", r.router_params},
        {"min_active_params", r.min_active_params},
        {"max_active_params", r.max_active_params},
        {"mean_active_params", r.mean_active_params},
        {"mean_adjugate_evals", r.mean_adjugate_evals},
        {"expected_adjugate_evals_uniform", expected},
        {"adjugate_saving", r.adjugate_saving(c.k)},
        {"expected_adjugate_saving_uniform", 1.0 - expected / static_cast<double>(c.k)},
        {"min_flops_per_token", 2 * r.min_active_params},
        {"max_flops_per_token", 2 * r.max_active_params},
        {"mean_flops_per_token", 2.0 * r.mean_active_params},
        {"adjugate_eval_bound", {{"lo", bound.lo}, {"hi", bound.hi}}},
        {"bound_violations", r.bound_violations},
        {"histogram", hist},
    };
    os << j.dump(2) << '\n';
}

void write_histogram_csv(std::ostream &os, const ActivationReport &r) {
    os << "n_adjugate_evals,frequency\n";
    for (const auto &[count, tokens] : r.eval_histogram)
        os << fmt::format("{},{:.17g}\n", count, static_cast<double>(tokens) / static_cast<double>(r.samples));
}

} // namespace grove
