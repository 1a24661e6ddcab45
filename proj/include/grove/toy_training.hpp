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
#include "grove/load_balance.hpp"

#include <cstdint>
#include <ostream>
#include <vector>

namespace grove {

// Synthetic regression: fit y = T x for a fixed random d x d map T. The data set
// is `batch` standard-normal tokens drawn once from `seed`; every step is a
// full-batch gradient descent update on the mean squared error, after which
// the balance controller updates the routing bias.

struct ToyTrainOptions {
    std::size_t steps = 200;
    std::size_t batch = 64;
    double learning_rate = 1.0;
    double ema_decay = 0.9;
    std::uint64_t task_seed = 1234; // target map
    std::uint64_t seed = 0;         // data set
};

struct ToyTrainRow {
    std::size_t step = 0;
    double loss = 0.0; // batch MSE before this step's update
    ImbalanceMetrics imbalance;
};

struct ToyTrainResult {
    GroveLayer layer;
    std::vector<ToyTrainRow> log;
};

Matrix toy_target(std::size_t d, std::uint64_t task_seed);

ToyTrainResult train_toy(GroveLayer layer, const ToyTrainOptions &options);

void write_loss_csv(std::ostream &os, const std::vector<ToyTrainRow> &log);

} // namespace grove
