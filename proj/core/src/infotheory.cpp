#include "bnrl/infotheory.hpp"

#include <algorithm>
#include <cmath>

#include "bnrl/errors.hpp"

namespace bnrl::info {

QuantizedDistribution quantize_activations(const Tensor& softmax_outputs,
                                           int bits) {
    if (bits < 1 || bits > 16) {
        throw ArgumentError("quantize_activations: bits must be in [1, 16]");
    }
    QuantizedDistribution dist;
    dist.bits = bits;
    dist.dims = softmax_outputs.cols();
    const double scale = static_cast<double>(1 << bits);
    std::vector<std::uint16_t> symbol(dist.dims);
    for (std::size_t i = 0; i < softmax_outputs.rows(); ++i) {
        const auto row = softmax_outputs.row(i);
        double sum = 0.0;
        for (double v : row) sum += v;
        if (std::abs(sum - 1.0) > 1e-9) {
            throw DataError("quantize_activations: row " + std::to_string(i) +
                            " is not a probability vector (sum " +
                            std::to_string(sum) + ")");
        }
        for (std::size_t j = 0; j < dist.dims; ++j) {
            // ties round half-up
            symbol[j] = static_cast<std::uint16_t>(
                std::floor(row[j] * scale + 0.5));
        }
        ++dist.symbol_counts[symbol];
        ++dist.total;
    }
    return dist;
}

double plugin_entropy(const QuantizedDistribution& dist) {
    if (dist.total == 0) throw ArgumentError("plugin_entropy: empty distribution");
    const double n = static_cast<double>(dist.total);
    double entropy = 0.0;
    for (const auto& [symbol, count] : dist.symbol_counts) {
        const double p = static_cast<double>(count) / n;
        entropy -= p * std::log2(p);
    }
    return entropy;
}

double entropy_confidence(std::size_t n, int bits, std::size_t dims) {
    if (n < 1) throw ArgumentError("entropy_confidence: N must be >= 1");
    const double m = std::pow(2.0, bits);
    const double nd = static_cast<double>(n);
    const double bias = std::log2(1.0 + (m - 1.0) / nd);
    const double variance = std::log2(m) / std::sqrt(nd);
    return static_cast<double>(dims) * (bias + variance);
}

int intrinsic_precision(nn::Model& model, const Tensor& inputs) {
    if (model.mode != nn::Mode::Eval) {
        throw ModeError("intrinsic_precision: model must be in eval mode");
    }
    const Tensor probs = nn::softmax_outputs(model, inputs);
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    std::vector<std::size_t> argmax(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = probs.row(i);
        argmax[i] = static_cast<std::size_t>(
            std::max_element(row.begin(), row.end()) - row.begin());
    }
    for (int bits = 1; bits <= 16; ++bits) {
        const double scale = static_cast<double>(1 << bits);
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            const auto row = probs.row(i);
            double best = -1.0;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const double q = std::floor(row[j] * scale + 0.5);
                if (q > best) {
                    best = q;
                    best_j = j;
                }
            }
            ok = (best_j == argmax[i]) &&
                 std::floor(row[argmax[i]] * scale + 0.5) == best;
        }
        if (ok) return bits;
    }
    throw StateError("intrinsic_precision: no precision <= 16 bits preserves "
                     "every prediction");
}

}  // namespace bnrl::info
