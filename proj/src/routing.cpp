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

#include "grove/routing.hpp"

#include <algorithm>
#include <numeric>

namespace grove {

void Grouping::validate() const {
    if (n == 0 || g == 0 || n % g != 0)
        throw std::invalid_argument("group count g=" + std::to_string(g) + " must divide expert count n=" +
                                    std::to_string(n));
}

std::size_t Grouping::min_groups(std::size_t k) const {
    const std::size_t s = group_size();
    return (k + s - 1) / s;
}

std::size_t Grouping::max_groups(std::size_t k) const { return std::min(k, g); }

std::size_t group_of(std::size_t i, std::size_t n, std::size_t g) {
    const Grouping grouping{n, g};
    grouping.validate();
    if (i >= n)
        throw std::out_of_range("expert index " + std::to_string(i) + " >= n=" + std::to_string(n));
    return grouping.group_of(i);
}

Vector logits(const Router &router, std::span<const double> x) { return matvec(router.weight, x); }

std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const double> bias,
                                     std::size_t k) {
    const std::size_t n = scores.size();
    if (bias.size() != n)
        throw DimensionError("select_topk: scores and bias lengths differ");
    if (k < 1 || k > n)
        throw std::out_of_range("select_topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) +
                                "]");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> key(n);
    for (std::size_t i = 0; i < n; ++i)
        key[i] = scores[i] + bias[i];
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return key[a] > key[b] || (key[a] == key[b] && a < b); });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

void check_lambda(double lambda, const Grouping &grouping) {
    const double bound = static_cast<double>(grouping.g) / static_cast<double>(grouping.n);
    if (!(lambda > 0.0 && lambda <= bound))
        throw std::invalid_argument("lambda=" + std::to_string(lambda) + " outside (0, g/n=" +
                                    std::to_string(bound) + "]");
}

void fill_weights(RoutingDecision &d, double lambda, const Grouping &grouping) {
    d.gate_weights.clear();
    d.group_weights.clear();
    d.gate_weights.reserve(d.selected.size());
    for (std::size_t i : d.selected) {
        const double w = d.softmax_scores[i];
        d.gate_weights.push_back(w);
        d.group_weights[grouping.group_of(i)] += w;
    }
    for (auto &[group, w] : d.group_weights)
        w *= lambda;
}

} // namespace

RoutingDecision route_logits(Vector z, std::span<const double> bias, std::size_t k, double lambda,
                             const Grouping &grouping) {
    grouping.validate();
    if (grouping.n != z.size())
        throw DimensionError("route: grouping covers " + std::to_string(grouping.n) + " experts, logits have " +
                             std::to_string(z.size()));
    check_lambda(lambda, grouping);
    RoutingDecision d;
    d.sigmoid_scores = sigmoid(z);
    d.softmax_scores = softmax(z);
    d.selected = select_topk(d.sigmoid_scores, bias, k);
    fill_weights(d, lambda, grouping);
    d.logits = std::move(z);
    return d;
}

RoutingDecision decide_with_selection(Vector z, std::vector<std::size_t> selected, double lambda,
                                      const Grouping &grouping) {
    grouping.validate();
    if (grouping.n != z.size())
        throw DimensionError("decide_with_selection: logits length != n");
    check_lambda(lambda, grouping);
    std::sort(selected.begin(), selected.end());
    if (selected.empty() || std::adjacent_find(selected.begin(), selected.end()) != selected.end() ||
        selected.back() >= z.size())
        throw std::invalid_argument("decide_with_selection: selection must be distinct indices in [0, n)");
    RoutingDecision d;
    d.sigmoid_scores = sigmoid(z);
    d.softmax_scores = softmax(z);
    d.selected = std::move(selected);
    fill_weights(d, lambda, grouping);
    d.logits = std::move(z);
    return d;
}

RoutingDecision route(const Router &router, std::span<const double> bias, std::span<const double> x,
                      std::size_t k, double lambda, const Grouping &grouping) {
    return route_logits(logits(router, x), bias, k, lambda, grouping);
}

} // namespace grove
