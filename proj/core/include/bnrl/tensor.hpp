#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "bnrl/errors.hpp"

namespace bnrl {

/// Dense 2-D row-major matrix of doubles. Once constructed, treat as a value:
/// copies are deep, and sharing a const Tensor across threads is safe.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols);  // zero-filled
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
    Tensor(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;
    /// Throws DataError if any entry is NaN/Inf.
    void ensure_finite(const char* context) const;

    bool same_shape(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double scalar);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

bool operator==(const Tensor& a, const Tensor& b);

/// Standard matrix product (a.rows x b.cols). Throws ShapeError on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

struct ColumnStats {
    std::vector<double> means;
    std::vector<double> variances;  // biased, 1/B divisor
};

/// Per-column mean and biased variance. Throws ShapeError on an empty tensor.
ColumnStats column_stats(const Tensor& x);

/// Deterministic seedable random stream: xoshiro256++ seeded via splitmix64,
/// gaussians by Box-Muller. Single-owner mutable state; never share between
/// threads, give each worker its own seeded instance.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// N(mean, std^2) via Box-Muller on successive uniform draws.
    double normal(double mean = 0.0, double std = 1.0);

private:
    std::uint64_t state_[4];
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

/// Derive an independent stream seed for a tagged sub-task of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// i.i.d. normal draws. Throws ArgumentError if std < 0.
Tensor gaussian(RandomSource& rng, std::size_t rows, std::size_t cols,
                double mean, double std);

}  // namespace bnrl
