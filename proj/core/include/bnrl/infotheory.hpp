#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "bnrl/nn.hpp"
#include "bnrl/tensor.hpp"

namespace bnrl::info {

struct SymbolHash {
    std::size_t operator()(const std::vector<std::uint16_t>& symbol) const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (std::uint16_t v : symbol) {
            h ^= v;
            h *= 0x100000001B3ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

/// Empirical distribution of quantized activation vectors. Each symbol
/// component is stored as the integer grid index k, value k / 2^bits.
struct QuantizedDistribution {
    std::unordered_map<std::vector<std::uint16_t>, std::size_t, SymbolHash>
        symbol_counts;
    std::size_t total = 0;
    int bits = 0;
    std::size_t dims = 0;
};

/// Rounds every coordinate to the nearest multiple of 2^-bits (ties half-up)
/// and aggregates rows into symbol counts. Rows must be probability vectors
/// (sum 1 +- 1e-9).
QuantizedDistribution quantize_activations(const Tensor& softmax_outputs,
                                           int bits);

/// Plug-in maximum-likelihood entropy, -sum (c/N) log2 (c/N), in bits.
double plugin_entropy(const QuantizedDistribution& dist);

/// dims * [log2(1 + (m-1)/N) + N^{-1/2} log2 m] with m = 2^bits; bias plus
/// variance bound for the plug-in estimate, one term per dimension.
double entropy_confidence(std::size_t n, int bits, std::size_t dims);

/// Smallest b in [1, 16] whose quantized softmax preserves the argmax of the
/// unquantized softmax for every sample. Linear scan from b=1 upward; throws
/// StateError if no b <= 16 suffices.
int intrinsic_precision(nn::Model& model, const Tensor& inputs);

}  // namespace bnrl::info
