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

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grove {

using Vector = std::vector<double>;

/// Thrown when operand shapes do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool operator==(const Matrix &) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Deterministic xoshiro256** stream seeded through splitmix64.
/// Gaussian samples use Box-Muller so streams match across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double normal();
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

Vector matvec(const Matrix &w, std::span<const double> x);
/// w^T x, used by the backward pass.
Vector matvec_transposed(const Matrix &w, std::span<const double> x);
/// acc += scale * (a outer b)
void add_outer(Matrix &acc, std::span<const double> a, std::span<const double> b, double scale = 1.0);
void axpy(double a, std::span<const double> x, std::span<double> y);

double silu(double t);
double silu_grad(double t);
double sigmoid(double t);

Vector silu(std::span<const double> v);
Vector sigmoid(std::span<const double> v);
Vector softmax(std::span<const double> v);
double rms(std::span<const double> v);
double max_abs(std::span<const double> v);

Matrix normal_init(Rng &rng, std::size_t rows, std::size_t cols, double sigma);
Vector normal_vector(Rng &rng, std::size_t len, double sigma = 1.0);

bool all_finite(std::span<const double> v);

} // namespace grove
