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

#include "grove/cli.hpp"
#include "grove/checkpoint.hpp"
#include "grove/gradcheck.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

namespace grove {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::path(::testing::TempDir()) /
               ("grove_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string &name) const { return (dir_ / name).string(); }

    std::string write_config(const std::string &name, json overrides) const {
        json j{{"kind", "grove"}, {"d", 8},       {"n", 16},     {"k", 4},          {"g", 8},
               {"h", 4},          {"m", 8},       {"lambda", 0.1}, {"alpha", 0.001}, {"init_sigma", 0.006},
               {"seed", 3}};
        if (!overrides.is_null())
            j.update(overrides);
        std::ofstream(path(name)) << j.dump(2);
        return path(name);
    }

    fs::path dir_;
};

TEST_F(CliTest, InitIsByteIdenticalAcrossRuns) {
    const auto cfg = write_config("c.json", {});
    ASSERT_EQ(run({"init", "--config", cfg, "--out", path("a.ckpt")}).code, 0);
    ASSERT_EQ(run({"init", "--config", cfg, "--out", path("b.ckpt")}).code, 0);
    EXPECT_EQ(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
    EXPECT_EQ(load(path("a.ckpt")).config.seed, 3u);
}

TEST_F(CliTest, EverySubcommandIsDeterministic) {
    const auto cfg = write_config("c.json", {});
    const auto plain = write_config("p.json", {{"kind", "plain"}});
    ASSERT_EQ(run({"init", "--config", plain, "--out", path("p.ckpt")}).code, 0);
    const std::vector<std::pair<std::vector<std::string>, std::string>> cases{
        {{"forward", "--config", cfg, "--samples", "3", "--format", "json", "--out", "@"}, "fwd.json"},
        {{"simulate-routing", "--config", cfg, "--samples", "500", "--out", "@"}, "routing/report.json"},
        {{"simulate-balance", "--config", cfg, "--steps", "50", "--batch", "16", "--hot", "2", "--out", "@"},
         "balance.csv"},
        {{"gradcheck", "--config", cfg, "--probes", "2", "--entries", "8", "--out", "@"}, "grad.json"},
        {{"train-toy", "--config", cfg, "--steps", "5", "--batch", "8", "--out", "@"}, "train/loss.csv"},
        {{"upcycle", "--ckpt", path("p.ckpt"), "--groups", "8", "--adj-dim", "4", "--lambda", "0.1", "--out", "@"},
         "up.ckpt"},
        {{"stats", "--config", cfg, "--out", "@"}, "stats.json"},
    };
    for (const auto &[args, target] : cases) {
        std::string first;
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path sub = dir_ / ("rep" + std::to_string(rep));
            std::vector<std::string> a = args;
            const fs::path out_file = sub / target;
            fs::create_directories(out_file.parent_path());
            for (auto &s : a)
                if (s == "@")
                    s = (target.find('/') != std::string::npos ? out_file.parent_path() : out_file).string();
            const CliResult r = run(a);
            ASSERT_EQ(r.code, 0) << args[0] << ": " << r.err;
            const std::string bytes = slurp(out_file);
            ASSERT_FALSE(bytes.empty()) << args[0];
            if (rep == 0)
                first = bytes;
            else
                EXPECT_EQ(bytes, first) << args[0];
        }
    }
}

TEST_F(CliTest, StructuralConfigErrorsExitOne) {
    const CliResult bad_g = run({"init", "--config", write_config("g.json", {{"g", 5}}), "--out", path("x.ckpt")});
    EXPECT_EQ(bad_g.code, 1);
    EXPECT_NE(bad_g.err.find("g"), std::string::npos);
    const CliResult bad_l =
        run({"init", "--config", write_config("l.json", {{"lambda", 0.6}}), "--out", path("x.ckpt")});
    EXPECT_EQ(bad_l.code, 1);
    EXPECT_NE(bad_l.err.find("lambda"), std::string::npos);
    EXPECT_EQ(run({"init", "--config", write_config("u.json", {{"experts", 3}}), "--out", path("x.ckpt")}).code, 1);
    EXPECT_FALSE(fs::exists(path("x.ckpt")));
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"stats", "--bogus"}).code, 1);
    EXPECT_EQ(run({"stats", "--ckpt", path("missing.ckpt")}).code, 2);
    EXPECT_EQ(run({"upcycle", "--ckpt", path("missing.ckpt"), "--out", path("o.ckpt")}).code, 2);
    const auto cfg = write_config("c.json", {});
    EXPECT_EQ(run({"gradcheck", "--config", cfg, "--probes", "0"}).code, 1);
    std::ofstream(path("junk.ckpt")) << "not a checkpoint";
    EXPECT_EQ(run({"forward", "--ckpt", path("junk.ckpt")}).code, 2);
    // upcycling an already-grove checkpoint is a usage error
    ASSERT_EQ(run({"init", "--config", cfg, "--out", path("g.ckpt")}).code, 0);
    EXPECT_EQ(run({"upcycle", "--ckpt", path("g.ckpt"), "--out", path("o.ckpt")}).code, 1);
}

TEST_F(CliTest, UpcycleReportsPreservation) {
    ASSERT_EQ(run({"init", "--config", write_config("p.json", {{"kind", "plain"}}), "--out", path("p.ckpt")}).code, 0);
    const CliResult r =
        run({"upcycle", "--ckpt", path("p.ckpt"), "--groups", "4", "--lambda", "0.25", "--out", path("u.ckpt")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("routing decisions identical: yes"), std::string::npos);
    EXPECT_EQ(run({"upcycle", "--ckpt", path("p.ckpt"), "--groups", "4", "--lambda", "0.3", "--out", path("v.ckpt")})
                  .code,
              1);
}

std::vector<double> losses(const std::string &csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<double> out;
    while (std::getline(in, line))
        out.push_back(std::stod(line.substr(line.find(',') + 1)));
    return out;
}

TEST_F(CliTest, TrainToyLossFallsAndUpcycledStartsLikePlain) {
    ASSERT_EQ(run({"init", "--config", write_config("p.json", {{"kind", "plain"}}), "--out", path("p.ckpt")}).code, 0);
    ASSERT_EQ(run({"upcycle", "--ckpt", path("p.ckpt"), "--groups", "8", "--lambda", "0.1", "--out", path("u.ckpt")})
                  .code,
              0);
    ASSERT_EQ(run({"train-toy", "--ckpt", path("p.ckpt"), "--steps", "60", "--out", path("tp")}).code, 0);
    ASSERT_EQ(run({"train-toy", "--ckpt", path("u.ckpt"), "--steps", "60", "--out", path("tu")}).code, 0);
    const auto lp = losses(slurp(path("tp/loss.csv")));
    const auto lu = losses(slurp(path("tu/loss.csv")));
    ASSERT_EQ(lp.size(), 60u);
    EXPECT_NEAR(lu.front(), lp.front(), 1e-12 * lp.front());
    EXPECT_LT(lu.back(), 0.5 * lu.front());
    EXPECT_LT(lp.back(), 0.5 * lp.front());
    EXPECT_TRUE(load(path("tu/final.ckpt")).is_grove());
}

TEST(GradCheckControl, CorruptedBackwardIsCaught) {
    GroveConfig c;
    c.d = 6, c.n = 8, c.k = 2, c.g = 4, c.h = 3, c.m = 5, c.lambda = 0.25;
    Rng rng(1);
    const GroveLayer layer = init_layer(c, LayerKind::grove, rng);
    Rng probes(2);
    EXPECT_TRUE(gradcheck(layer, 3, probes).passed);
    const BackwardFn broken = [](const GroveLayer &l, std::span<const double> x, const RoutingDecision &d,
                                 std::span<const double> u) {
        Gradients g = grove_backward(l, x, d, u);
        for (auto &a : g.adjugates)
            for (double &v : a.down.data())
                v *= 1.01;
        return g;
    };
    Rng again(2);
    const GradCheckReport bad = gradcheck(layer, 3, again, {}, broken);
    EXPECT_FALSE(bad.passed);
    EXPECT_GT(bad.max_rel_error, 1e-3);
}

} // namespace
} // namespace grove
