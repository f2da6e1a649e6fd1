#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bnrl/tensor.hpp"

namespace bnrl::data {

struct NormStats {
    double mean = 0.0;
    double std = 1.0;
};

/// Immutable after construction; freely shareable between threads.
struct Dataset {
    Tensor inputs;            // n x d
    std::vector<int> labels;  // n, in [0, num_classes)
    std::size_t side = 0;     // image side length, 0 for non-image data
    bool normalized = false;
    NormStats norm_stats;
    std::pair<double, double> value_bounds{0.0, 0.0};  // min/max after normalize

    std::size_t count() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
};

/// Big-endian IDX decoding (image magic 0x00000803, label magic 0x00000801);
/// pixels scaled to [0,1]. Throws FormatError with the bad offset.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

/// Re-encode to IDX bytes (round-trip check; pixel values must be the raw
/// [0,1]-scaled grid, i.e. before normalization).
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);

/// x <- (x - mu) / sigma with scalar mu, sigma. Fit on this dataset unless
/// `reuse` carries statistics from the training split. Throws DataError when
/// sigma == 0.
Dataset normalize(const Dataset& ds, std::optional<NormStats> reuse = {});

/// Global std of the per-pixel mean-centered data: sqrt of the mean biased
/// per-pixel variance. Equals the divisor of the alternative normalization
/// x <- x - x.mean(axis=0); x <- x / x.std(), and hence the conversion
/// factor between that unit system and the scalar one above.
double pixelwise_centered_std(const Dataset& ds);

/// Nearest-neighbor upscale: src_index = floor(dst_index * src_side / dst_side).
/// Integer factors give exact pixel replication. Downscaling is unsupported.
Dataset resize_nearest(const Dataset& ds, std::size_t target_side);

/// Adds N(0, variance) i.i.d. noise. When resize_after is set the noise is
/// applied at the current (28x28) resolution first, then upscaled.
Dataset corrupt_gaussian(const Dataset& ds, double variance, RandomSource& rng,
                         std::optional<std::size_t> resize_after = {});

struct SpheresSpec {
    double inner_radius = 1.0;
    double outer_radius = 1.3;
    std::size_t ambient_dim = 2;
    std::size_t train_count = 500;
    std::size_t test_count_per_class = 10000;
    double test_noise_var = 0.005;
};

enum class Split { Train, Test };

/// Standard-normal draws projected onto the class circle. Train: 500 points
/// with alternating class assignment (exact 250/250 balance). Test: 10000 per
/// class, optionally with N(0, test_noise_var * I) noise added after the
/// projection. Label 0 = inner sphere, 1 = outer.
Dataset spheres_sample(const SpheresSpec& spec, RandomSource& rng, Split split,
                       bool add_test_noise = true);

}  // namespace bnrl::data
