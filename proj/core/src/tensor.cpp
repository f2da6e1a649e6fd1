#include "bnrl/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <string>

namespace bnrl {

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                         " != rows*cols " + std::to_string(rows_ * cols_));
    }
    ensure_finite("Tensor constructor");
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("Tensor: ragged initializer list");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
    ensure_finite("Tensor constructor");
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::ensure_finite(const char* context) const {
    if (!all_finite()) {
        throw DataError(std::string(context) + ": tensor contains NaN/Inf");
    }
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("Tensor -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double scalar) {
    for (double& v : data_) v *= scalar;
    return *this;
}

bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.values() == b.values();
}

namespace {

Tensor gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, const Tensor& a,
            const Tensor& b) {
    const std::size_t m = (ta == CblasNoTrans) ? a.rows() : a.cols();
    const std::size_t k = (ta == CblasNoTrans) ? a.cols() : a.rows();
    const std::size_t kb = (tb == CblasNoTrans) ? b.rows() : b.cols();
    const std::size_t n = (tb == CblasNoTrans) ? b.cols() : b.rows();
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(k) +
                         " and " + std::to_string(kb) + " differ");
    }
    Tensor c(m, n);
    if (m == 0 || n == 0 || k == 0) return c;
    cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0, a.data(),
                static_cast<int>(a.cols()), b.data(),
                static_cast<int>(b.cols()), 0.0, c.data(),
                static_cast<int>(n));
    return c;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    return gemm(CblasNoTrans, CblasNoTrans, a, b);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    return gemm(CblasTrans, CblasNoTrans, a, b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    return gemm(CblasNoTrans, CblasTrans, a, b);
}

ColumnStats column_stats(const Tensor& x) {
    if (x.rows() == 0 || x.cols() == 0) {
        throw ShapeError("column_stats: empty tensor");
    }
    const std::size_t n = x.rows();
    const std::size_t c = x.cols();
    ColumnStats stats;
    stats.means.assign(c, 0.0);
    stats.variances.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = x.row(i);
        for (std::size_t j = 0; j < c; ++j) stats.means[j] += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) stats.means[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = x.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            const double d = row[j] - stats.means[j];
            stats.variances[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < c; ++j) {
        stats.variances[j] /= static_cast<double>(n);
    }
    return stats;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
}

std::uint64_t RandomSource::next_u64() {
    // xoshiro256++
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RandomSource::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomSource::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RandomSource::normal(double mean, double std) {
    if (std < 0.0) throw ArgumentError("normal: negative std");
    if (has_cached_) {
        has_cached_ = false;
        return mean + std * cached_normal_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_ = true;
    return mean + std * r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t sm = seed ^ (0xA0761D6478BD642FULL * (tag + 1));
    return splitmix64(sm);
}

Tensor gaussian(RandomSource& rng, std::size_t rows, std::size_t cols,
                double mean, double std) {
    if (std < 0.0) throw ArgumentError("gaussian: negative std");
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(mean, std);
    return t;
}

}  // namespace bnrl
