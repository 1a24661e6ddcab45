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
#include <functional>
#include <ostream>
#include <vector>

namespace grove {

/// Auxiliary-loss-free balancing state. F tracks the expected per-token
/// assignment vector, Q is the uniform target and b the selection bias.
class LoadTracker {
public:
    LoadTracker(std::size_t n, double alpha, double ema_decay = 0.9);

    std::size_t n() const { return n_; }
    double alpha() const { return alpha_; }
    double ema_decay() const { return ema_decay_; }
    const Vector &load() const { return load_; }
    const Vector &target() const { return target_; }
    const Vector &bias() const { return bias_; }
    std::uint64_t observations() const { return observations_; }

    void set_bias(Vector bias);

    /// F <- decay * F + (1 - decay) * f. The first observation replaces F outright.
    void update_load(std::span<const double> batch_mean_f);
    /// b <- b - alpha * (F - Q) / rms(F - Q); no-op at perfect balance.
    /// Returns the applied decrement alpha * (F - Q) / rms(F - Q) (zeros on no-op).
    Vector update_bias();

private:
    std::size_t n_;
    double alpha_;
    double ema_decay_;
    Vector load_;
    Vector target_;
    Vector bias_;
    std::uint64_t observations_ = 0;
};

/// f_i = 1/k for selected experts, 0 otherwise.
Vector token_assignment(const RoutingDecision &decision, std::size_t n, std::size_t k);
Vector token_assignment(std::span<const std::size_t> selected, std::size_t n, std::size_t k);

struct ImbalanceMetrics {
    double max_violation = 0.0; // max_i |F_i - Q_i|
    double rms_violation = 0.0; // rms(F - Q)
};

ImbalanceMetrics imbalance_metrics(const LoadTracker &tracker);

/// Produces one batch of router logits per call.
using LogitSource = std::function<std::vector<Vector>(Rng &)>;

/// Standard-normal tokens through a fixed random router, with `skew` added to the
/// logits of the first `hot` experts. Unless `resample` is set, one batch is drawn
/// from `scenario_seed` and replayed every step (stationary logits).
struct SkewedLogitScenario {
    std::size_t n = 128;
    std::size_t d = 32;
    std::size_t batch = 128;
    std::size_t hot = 16;
    double skew = 2.0;
    bool resample = false;
    std::uint64_t scenario_seed = 7;

    LogitSource source() const;
};

struct BalanceSimConfig {
    std::size_t n = 128;
    std::size_t k = 8;
    double alpha = 0.001;
    double ema_decay = 0.9;
    std::size_t steps = 20000;
    std::uint64_t seed = 0;
};

struct BalanceStep {
    std::size_t step = 0;
    ImbalanceMetrics metrics;
    double update_rms = 0.0; // rms of the bias decrement applied after this step
};

struct BalanceTrajectory {
    std::vector<BalanceStep> steps;
    Vector final_bias;
};

/// Closed loop: route each batch with the current bias, fold its mean assignment
/// into F, record the metrics, then update b once per batch.
BalanceTrajectory simulate_balance(const BalanceSimConfig &config, const LogitSource &source);

void write_trajectory_csv(std::ostream &os, const BalanceTrajectory &trajectory);

} // namespace grove
