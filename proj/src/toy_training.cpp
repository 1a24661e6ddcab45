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

#include "grove/toy_training.hpp"

#include <cmath>

#include <fmt/format.h>

namespace grove {

Matrix toy_target(std::size_t d, std::uint64_t task_seed) {
    Rng rng(task_seed);
    return normal_init(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
}

namespace {

void sgd(Matrix &param, const Matrix &grad, double lr) { axpy(-lr, grad.data(), param.data()); }

void sgd(GatedFfn &param, const GatedFfn &grad, double lr) {
    sgd(param.gate, grad.gate, lr);
    sgd(param.up, grad.up, lr);
    sgd(param.down, grad.down, lr);
}

} // namespace

ToyTrainResult train_toy(GroveLayer layer, const ToyTrainOptions &opt) {
    if (opt.steps < 1)
        throw std::invalid_argument("train_toy: steps must be >= 1");
    if (opt.batch < 1)
        throw std::invalid_argument("train_toy: batch must be >= 1");
    layer.validate();
    const std::size_t d = layer.config.d;
    const Matrix target = toy_target(d, opt.task_seed);
    LoadTracker tracker(layer.config.n, layer.config.alpha, opt.ema_decay);
    tracker.set_bias(layer.bias);
    Rng rng(opt.seed);
    std::vector<Vector> tokens;
    tokens.reserve(opt.batch);
    for (std::size_t t = 0; t < opt.batch; ++t)
        tokens.push_back(normal_vector(rng, d));
    std::vector<Vector> targets;
    targets.reserve(opt.batch);
    for (const auto &x : tokens)
        targets.push_back(matvec(target, x));

    ToyTrainResult result;
    result.log.reserve(opt.steps);
    const double inv_count = 1.0 / static_cast<double>(opt.batch * d);
    for (std::size_t step = 0; step < opt.steps; ++step) {
        const BatchResult fwd = batch_forward(layer, tokens, ForwardMode::dedup);

        Gradients grads = Gradients::zeros_like(layer);
        double loss = 0.0;
        for (std::size_t t = 0; t < opt.batch; ++t) {
            const Vector &want = targets[t];
            Vector upstream(d);
            for (std::size_t r = 0; r < d; ++r) {
                const double err = fwd.outputs[t][r] - want[r];
                loss += err * err * inv_count;
                upstream[r] = 2.0 * err * inv_count;
            }
            accumulate_backward(layer, tokens[t], fwd.decisions[t], upstream, grads);
        }

        sgd(layer.router.weight, grads.router, opt.learning_rate);
        for (std::size_t i = 0; i < layer.experts.size(); ++i)
            sgd(layer.experts[i], grads.experts[i], opt.learning_rate);
        for (std::size_t j = 0; j < layer.adjugates.size(); ++j)
            sgd(layer.adjugates[j], grads.adjugates[j], opt.learning_rate);

        tracker.update_load(fwd.load);
        result.log.push_back({step, loss, imbalance_metrics(tracker)});
        tracker.update_bias();
        layer.bias = tracker.bias();
    }
    result.layer = std::move(layer);
    return result;
}

void write_loss_csv(std::ostream &os, const std::vector<ToyTrainRow> &log) {
    os << "step,loss,max_violation,rms_violation\n";
    for (const auto &r : log)
        os << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.step, r.loss, r.imbalance.max_violation,
                          r.imbalance.rms_violation);
}

} // namespace grove
