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

#include "grove/load_balance.hpp"

#include <cmath>
#include <memory>

#include <fmt/format.h>

namespace grove {

LoadTracker::LoadTracker(std::size_t n, double alpha, double ema_decay)
    : n_(n), alpha_(alpha), ema_decay_(ema_decay), load_(n, 0.0), target_(n, 0.0), bias_(n, 0.0) {
    if (n == 0)
        throw std::invalid_argument("LoadTracker: n must be positive");
    if (!(alpha >= 0.0))
        throw std::invalid_argument("LoadTracker: alpha must be non-negative");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0))
        throw std::invalid_argument("LoadTracker: ema_decay must lie in [0, 1)");
    const double q = 1.0 / static_cast<double>(n);
    target_.assign(n, q);
    load_.assign(n, q);
}

void LoadTracker::set_bias(Vector bias) {
    if (bias.size() != n_)
        throw DimensionError("LoadTracker::set_bias: length mismatch");
    bias_ = std::move(bias);
}

void LoadTracker::update_load(std::span<const double> f) {
    if (f.size() != n_)
        throw DimensionError("update_load: batch load has " + std::to_string(f.size()) + " entries, expected " +
                             std::to_string(n_));
    if (observations_ == 0) {
        load_.assign(f.begin(), f.end());
    } else {
        for (std::size_t i = 0; i < n_; ++i)
            load_[i] = ema_decay_ * load_[i] + (1.0 - ema_decay_) * f[i];
    }
    ++observations_;
}

Vector LoadTracker::update_bias() {
    Vector delta(n_);
    for (std::size_t i = 0; i < n_; ++i)
        delta[i] = load_[i] - target_[i];
    const double norm = rms(delta);
    if (norm == 0.0) {
        delta.assign(n_, 0.0);
        return delta;
    }
    for (std::size_t i = 0; i < n_; ++i) {
        delta[i] *= alpha_ / norm;
        bias_[i] -= delta[i];
    }
    return delta;
}

Vector token_assignment(std::span<const std::size_t> selected, std::size_t n, std::size_t k) {
    if (selected.size() != k)
        throw std::invalid_argument("token_assignment: expected " + std::to_string(k) + " selected experts");
    Vector f(n, 0.0);
    const double share = 1.0 / static_cast<double>(k);
    for (std::size_t i : selected) {
        if (i >= n)
            throw std::out_of_range("token_assignment: expert index out of range");
        f[i] = share;
    }
    return f;
}

Vector token_assignment(const RoutingDecision &decision, std::size_t n, std::size_t k) {
    return token_assignment(decision.selected, n, k);
}

ImbalanceMetrics imbalance_metrics(const LoadTracker &tracker) {
    Vector delta(tracker.n());
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = tracker.load()[i] - tracker.target()[i];
    return {max_abs(delta), rms(delta)};
}

LogitSource SkewedLogitScenario::source() const {
    Rng scenario_rng(scenario_seed);
    auto weight =
        std::make_shared<const Matrix>(normal_init(scenario_rng, n, d, 1.0 / std::sqrt(static_cast<double>(d))));
    auto draw = [weight, batch = batch, hot = hot, skew = skew, d = d](Rng &rng) {
        std::vector<Vector> out;
        out.reserve(batch);
        for (std::size_t t = 0; t < batch; ++t) {
            Vector z = matvec(*weight, normal_vector(rng, d));
            for (std::size_t i = 0; i < hot && i < z.size(); ++i)
                z[i] += skew;
            out.push_back(std::move(z));
        }
        return out;
    };
    if (resample)
        return draw;
    auto fixed = std::make_shared<const std::vector<Vector>>(draw(scenario_rng));
    return [fixed](Rng &) { return *fixed; };
}

BalanceTrajectory simulate_balance(const BalanceSimConfig &config, const LogitSource &source) {
    if (config.steps < 1)
        throw std::invalid_argument("simulate_balance: steps must be >= 1");
    if (config.k < 1 || config.k > config.n)
        throw std::invalid_argument("simulate_balance: k must lie in [1, n]");
    LoadTracker tracker(config.n, config.alpha, config.ema_decay);
    Rng rng(config.seed);
    BalanceTrajectory traj;
    traj.steps.reserve(config.steps);
    const double share = 1.0 / static_cast<double>(config.k);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const std::vector<Vector> batch = source(rng);
        if (batch.empty())
            throw std::invalid_argument("simulate_balance: logit source produced an empty batch");
        Vector f(config.n, 0.0);
        for (const auto &z : batch) {
            if (z.size() != config.n)
                throw DimensionError("simulate_balance: logit vector length != n");
            for (std::size_t i : select_topk(sigmoid(z), tracker.bias(), config.k))
                f[i] += share;
        }
        for (auto &v : f)
            v /= static_cast<double>(batch.size());
        tracker.update_load(f);
        BalanceStep rec{step, imbalance_metrics(tracker), 0.0};
        rec.update_rms = rms(tracker.update_bias());
        traj.steps.push_back(rec);
    }
    traj.final_bias = tracker.bias();
    return traj;
}

void write_trajectory_csv(std::ostream &os, const BalanceTrajectory &trajectory) {
    os << "step,max_violation,rms_violation\n";
    for (const auto &s : trajectory.steps)
        os << fmt::format("{},{:.17g},{:.17g}\n", s.step, s.metrics.max_violation, s.metrics.rms_violation);
}

} // namespace grove
