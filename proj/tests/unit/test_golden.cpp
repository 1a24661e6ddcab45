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

// Regression pins for the seeded end-to-end runs. A change here means the
// numerics moved; regenerate only after confirming the new values are right.

#include "grove/accounting.hpp"
#include "grove/checkpoint.hpp"
#include "grove/load_balance.hpp"
#include "grove/toy_training.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>

#include <gtest/gtest.h>
#include <json.hpp>

namespace grove {
namespace {

nlohmann::json golden(const std::string &name) {
    std::ifstream in(std::filesystem::path(GROVE_GOLDEN_DIR) / name);
    EXPECT_TRUE(in.good()) << name;
    return nlohmann::json::parse(in);
}

void expect_rel(double got, double want, double tol, const char *what) {
    EXPECT_LE(std::abs(got - want), tol * std::abs(want))
        << std::setprecision(17) << what << ": got " << got << " want " << want;
}

TEST(Golden, StandardBalanceScenario) {
    const auto g = golden("balance_standard.json");
    const BalanceTrajectory t = simulate_balance(BalanceSimConfig{}, SkewedLogitScenario{}.source());
    ASSERT_EQ(t.steps.size(), g.at("steps").get<std::size_t>());
    const double initial = t.steps.front().metrics.max_violation, last = t.steps.back().metrics.max_violation;
    expect_rel(initial, g.at("initial_max_violation"), 1e-12, "initial");
    expect_rel(last, g.at("final_max_violation"), 1e-9, "final");
    EXPECT_LE(last, initial / 5);
}

TEST(Golden, ToyTrainingTrajectory) {
    const auto g = golden("train_toy.json");
    GroveConfig c;
    c.seed = 42;
    Rng rng(c.seed);
    UpcycleOptions up;
    const GroveLayer layer = upcycle(init_layer(c, LayerKind::plain, rng), up);
    ToyTrainOptions opt;
    opt.steps = g.at("steps");
    const ToyTrainResult r = train_toy(layer, opt);
    expect_rel(r.log.front().loss, g.at("loss_first"), 1e-12, "first loss");
    expect_rel(r.log.back().loss, g.at("loss_last"), 1e-9, "last loss");
    EXPECT_LT(r.log.back().loss, r.log.front().loss);
}

TEST(Golden, DeskAccounting) {
    const auto g = golden("desk_accounting.json");
    const GroveConfig c;
    EXPECT_EQ(active_params(c, 4), g.at("min_active_params").get<std::uint64_t>());
    EXPECT_EQ(active_params(c, 8), g.at("max_active_params").get<std::uint64_t>());
    for (const auto &row : g.at("expected_distinct_groups"))
        expect_rel(expected_distinct_groups(128, row.at("g"), 8), row.at("value"), 1e-12, "expected groups");
}

} // namespace
} // namespace grove
