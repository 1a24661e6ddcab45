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

#include "grove/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace grove {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
        throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                             std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        m(i, i) = 1.0;
    return m;
}

namespace {

std::uint64_t splitmix64(std::uint64_t &x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace

Rng::Rng(std::uint64_t seed) {
    for (auto &s : s_)
        s = splitmix64(seed);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(theta);
    has_spare_ = true;
    return radius * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0)
        throw std::invalid_argument("Rng::below: bound must be positive");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = next_u64();
    while (v >= limit)
        v = next_u64();
    return v % bound;
}

Vector matvec(const Matrix &w, std::span<const double> x) {
    if (w.cols() != x.size())
        throw DimensionError("matvec: matrix has " + std::to_string(w.cols()) + " cols, vector has " +
                             std::to_string(x.size()) + " entries");
    Vector out(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto row = w.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c)
            acc += row[c] * x[c];
        out[r] = acc;
    }
    return out;
}

Vector matvec_transposed(const Matrix &w, std::span<const double> x) {
    if (w.rows() != x.size())
        throw DimensionError("matvec_transposed: matrix has " + std::to_string(w.rows()) +
                             " rows, vector has " + std::to_string(x.size()) + " entries");
    Vector out(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        if (x[r] == 0.0)
            continue;
        const auto row = w.row(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            out[c] += row[c] * x[r];
    }
    return out;
}

void add_outer(Matrix &acc, std::span<const double> a, std::span<const double> b, double scale) {
    if (acc.rows() != a.size() || acc.cols() != b.size())
        throw DimensionError("add_outer: shape mismatch");
    for (std::size_t r = 0; r < a.size(); ++r) {
        const double ar = scale * a[r];
        if (ar == 0.0)
            continue;
        auto row = acc.row(r);
        for (std::size_t c = 0; c < b.size(); ++c)
            row[c] += ar * b[c];
    }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size())
        throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += a * x[i];
}

double sigmoid(double t) {
    if (t >= 0.0)
        return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double silu(double t) { return t * sigmoid(t); }

double silu_grad(double t) {
    const double s = sigmoid(t);
    return s * (1.0 + t * (1.0 - s));
}

Vector silu(std::span<const double> v) {
    Vector out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double t) { return silu(t); });
    return out;
}

Vector sigmoid(std::span<const double> v) {
    Vector out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double t) { return sigmoid(t); });
    return out;
}

Vector softmax(std::span<const double> v) {
    if (v.empty())
        throw DimensionError("softmax: empty input");
    const double peak = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - peak);
        sum += out[i];
    }
    for (auto &p : out)
        p /= sum;
    return out;
}

double rms(std::span<const double> v) {
    if (v.empty())
        throw DimensionError("rms: empty input");
    double acc = 0.0;
    for (double t : v)
        acc += t * t;
    return std::sqrt(acc / static_cast<double>(v.size()));
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double t : v)
        m = std::max(m, std::abs(t));
    return m;
}

Matrix normal_init(Rng &rng, std::size_t rows, std::size_t cols, double sigma) {
    if (!(sigma >= 0.0))
        throw std::invalid_argument("normal_init: sigma must be non-negative");
    Matrix m(rows, cols);
    if (sigma == 0.0)
        return m;
    for (auto &v : m.data())
        v = sigma * rng.normal();
    return m;
}

Vector normal_vector(Rng &rng, std::size_t len, double sigma) {
    Vector v(len);
    for (auto &t : v)
        t = sigma * rng.normal();
    return v;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double t) { return std::isfinite(t); });
}

} // namespace grove
