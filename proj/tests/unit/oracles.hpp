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

// Test-only reference evaluations. Everything here is written with plain loops
// over the raw weight arrays and shares no code path with the library's
// forward/backward machinery beyond the data containers.

#pragma once

#include "grove/grove_layer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace grove::oracle {

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
inline double silu(double t) { return t / (1.0 + std::exp(-t)); }

inline std::vector<double> mul(const Matrix &w, const std::vector<double> &x) {
    std::vector<double> y(w.rows(), 0.0);
    const auto data = w.data();
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c)
            y[r] += data[r * w.cols() + c] * x[c];
    return y;
}

/// down * (silu(gate x) .* (up x)), step by step.
inline std::vector<double> ffn(const GatedFfn &e, const std::vector<double> &x) {
    const auto gx = mul(e.gate, x);
    const auto ux = mul(e.up, x);
    std::vector<double> h(gx.size());
    for (std::size_t i = 0; i < h.size(); ++i)
        h[i] = silu(gx[i]) * ux[i];
    return mul(e.down, h);
}

/// Softmax without max-subtraction; fine for the moderate logits used in tests.
inline std::vector<double> softmax(const std::vector<double> &z) {
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        s += (p[i] = std::exp(z[i]));
    for (auto &v : p)
        v /= s;
    return p;
}

/// Top-k by full stable sort on sigmoid(z) + b; lowest index wins ties.
inline std::vector<std::size_t> topk(const std::vector<double> &z, const std::vector<double> &bias, std::size_t k) {
    std::vector<std::size_t> idx(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return sigmoid(z[a]) + bias[a] > sigmoid(z[b]) + bias[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Per-term evaluation of sum_{i in S} p_i (E_i(x) + lambda * A_{i / (n/g)}(x)).
/// `lambda` = 0 or a plain layer gives the traditional MoE sum.
inline std::vector<double> layer_output(const GroveLayer &layer, const std::vector<double> &x,
                                        const std::vector<std::size_t> &selected, double lambda) {
    const auto p = softmax(mul(layer.router.weight, x));
    const std::size_t per_group = layer.is_grove() ? layer.config.n / layer.config.g : 1;
    std::vector<double> y(layer.config.d, 0.0);
    for (std::size_t i : selected) {
        const auto e = ffn(layer.experts[i], x);
        std::vector<double> a(layer.config.d, 0.0);
        if (layer.is_grove() && lambda != 0.0)
            a = ffn(layer.adjugates[i / per_group], x);
        for (std::size_t r = 0; r < y.size(); ++r)
            y[r] += p[i] * (e[r] + lambda * a[r]);
    }
    return y;
}

inline std::vector<std::size_t> selection(const GroveLayer &layer, const std::vector<double> &x) {
    return topk(mul(layer.router.weight, x), layer.bias, layer.config.k);
}

inline double sup_norm_diff(const std::vector<double> &a, const std::vector<double> &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double sup_norm(const std::vector<double> &a) {
    double m = 0.0;
    for (double v : a)
        m = std::max(m, std::abs(v));
    return m;
}

/// Probability-free count of distinct groups touched by `selected`.
inline std::size_t distinct_groups(const std::vector<std::size_t> &selected, std::size_t n, std::size_t g) {
    std::vector<bool> hit(g, false);
    for (std::size_t i : selected)
        hit[i / (n / g)] = true;
    return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
}

} // namespace grove::oracle
