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

#include "oracles.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

namespace grove {
namespace {

TEST(Params, DeskLayout) {
    const GroveConfig c;
    const auto p = conditional_params(c);
    EXPECT_EQ(p.per_expert, 3u * 32 * 48);
    EXPECT_EQ(p.per_adjugate, 3u * 32 * 8);
    EXPECT_EQ(p.router, 128u * 32);
    const auto b = adjugate_eval_bound(c);
    EXPECT_EQ(b.lo, 4u);
    EXPECT_EQ(b.hi, 8u);
    // 8 * 4608 + 4 * 768 and 8 * 4608 + 8 * 768
    EXPECT_EQ(active_params(c, 4), 39936u);
    EXPECT_EQ(active_params(c, 8), 43008u);
    EXPECT_EQ(flops_per_token(c, 4), 79872u);
    EXPECT_THROW(active_params(c, 3), std::out_of_range);
    EXPECT_THROW(active_params(c, 9), std::out_of_range);
}

TEST(Params, DedupFlopSavingAtFullCollision) {
    // Paying one adjugate per selected expert costs k adjugates; full collision costs k / (n/g).
    const GroveConfig c;
    const auto p = conditional_params(c);
    const double naive = 2.0 * (8.0 * p.per_expert + 8.0 * p.per_adjugate);
    EXPECT_NEAR(static_cast<double>(flops_per_token(c, 4)) / naive, 13.0 / 14.0, 1e-15);
}

// Exhaustive average over all C(n, k) subsets for small cases.
double enumerate_distinct(std::size_t n, std::size_t g, std::size_t k) {
    double total = 0.0;
    std::uint64_t count = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != k)
            continue;
        std::vector<std::size_t> sel;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1u)
                sel.push_back(i);
        total += static_cast<double>(oracle::distinct_groups(sel, n, g));
        ++count;
    }
    return total / static_cast<double>(count);
}

TEST(ExpectedGroups, MatchesExhaustiveEnumeration) {
    for (const auto &[n, g, k] : {std::tuple{8u, 4u, 3u}, {12u, 3u, 5u}, {16u, 8u, 4u}, {16u, 2u, 1u}, {10u, 10u, 6u}})
        EXPECT_NEAR(expected_distinct_groups(n, g, k), enumerate_distinct(n, g, k), 1e-12)
            << n << "/" << g << "/" << k;
}

TEST(ExpectedGroups, MatchesMonteCarlo) {
    std::mt19937_64 gen(99);
    for (std::size_t g : {64u, 32u, 16u}) {
        const std::size_t n = 128, k = 8, samples = 200000;
        std::vector<std::size_t> perm(n);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t t = 0; t < samples; ++t) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            for (std::size_t i = 0; i < k; ++i)
                std::swap(perm[i], perm[i + std::uniform_int_distribution<std::size_t>(0, n - 1 - i)(gen)]);
            const double c = static_cast<double>(
                oracle::distinct_groups(std::vector<std::size_t>(perm.begin(), perm.begin() + k), n, g));
            s1 += c;
            s2 += c * c;
        }
        const double mean = s1 / samples;
        const double se = std::sqrt((s2 / samples - mean * mean) / samples);
        EXPECT_NEAR(expected_distinct_groups(n, g, k), mean, 4 * se) << "g=" << g;
    }
}

TEST(ExpectedGroups, EdgeCases) {
    EXPECT_DOUBLE_EQ(expected_distinct_groups(128, 64, 1), 1.0);
    EXPECT_DOUBLE_EQ(expected_distinct_groups(128, 128, 8), 8.0);
    EXPECT_DOUBLE_EQ(expected_distinct_groups(128, 1, 8), 1.0);
    // C(126,8)/C(128,8) = 120*119/(128*127)
    EXPECT_NEAR(expected_distinct_groups(128, 64, 8), 64.0 * (1.0 - 120.0 * 119.0 / (128.0 * 127.0)), 1e-12);
}

TEST(Histogram, DeterministicRouterGivesSingleBar) {
    Rng rng(1);
    GroveLayer layer = init_layer(GroveConfig{}, LayerKind::grove, rng);
    layer.router.weight = Matrix(128, 32); // all logits tie -> experts 0..7 -> groups 0..3
    const auto rep = routing_histogram(layer, gaussian_tokens(32), 500, rng);
    ASSERT_EQ(rep.eval_histogram.size(), 1u);
    EXPECT_EQ(rep.eval_histogram.begin()->first, 4u);
    EXPECT_EQ(rep.eval_histogram.begin()->second, 500u);
    EXPECT_DOUBLE_EQ(rep.mean_active_params, 39936.0);
}

TEST(Histogram, SingletonGroupsAlwaysCostK) {
    GroveConfig c;
    c.g = 128;
    c.lambda = 0.5;
    Rng rng(2);
    const GroveLayer layer = init_layer(c, LayerKind::grove, rng);
    const auto rep = routing_histogram(layer, gaussian_tokens(32), 300, rng);
    ASSERT_EQ(rep.eval_histogram.size(), 1u);
    EXPECT_EQ(rep.eval_histogram.begin()->first, 8u);
}

TEST(Histogram, RandomRouterMeanIsInsideTheBound) {
    Rng rng(3);
    const GroveLayer layer = init_layer(GroveConfig{}, LayerKind::grove, rng);
    const auto rep = routing_histogram(layer, gaussian_tokens(32), 2000, rng);
    EXPECT_EQ(rep.bound_violations, 0u);
    EXPECT_EQ(rep.samples, 2000u);
    EXPECT_GT(rep.mean_active_params, 39936.0);
    EXPECT_LT(rep.mean_active_params, 43008.0);
    std::uint64_t total = 0;
    for (const auto &[evals, count] : rep.eval_histogram) {
        EXPECT_GE(evals, 4u);
        EXPECT_LE(evals, 8u);
        total += count;
    }
    EXPECT_EQ(total, 2000u);
}

TEST(Report, MergeReweightsMeans) {
    const GroveConfig c;
    ActivationReport a = make_report(c), b = make_report(c);
    record_token(a, c, 4);
    record_token(b, c, 8);
    record_token(b, c, 8);
    a.merge(b);
    EXPECT_EQ(a.samples, 3u);
    EXPECT_NEAR(a.mean_adjugate_evals, 20.0 / 3.0, 1e-12);
    EXPECT_NEAR(a.adjugate_saving(8), 1.0 - 20.0 / 24.0, 1e-12);
    EXPECT_EQ(a.eval_histogram.at(8), 2u);
}

TEST(Report, JsonAndCsvShape) {
    const GroveConfig c;
    ActivationReport r = make_report(c);
    record_token(r, c, 6);
    record_token(r, c, 7);
    std::ostringstream js, csv;
    write_report_json(js, r, c);
    write_histogram_csv(csv, r);
    const auto j = nlohmann::json::parse(js.str());
    EXPECT_EQ(j.at("samples"), 2);
    EXPECT_EQ(j.at("min_active_params"), 39936);
    EXPECT_EQ(j.at("adjugate_eval_bound").at("lo"), 4);
    EXPECT_EQ(j.at("histogram").size(), 2u);
    EXPECT_EQ(csv.str(), "n_adjugate_evals,frequency\n6,0.5\n7,0.5\n");
}

} // namespace
} // namespace grove
