#include "bnrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace bnrl::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                   const std::filesystem::path& path) {
    if (offset + 4 > buf.size()) {
        throw FormatError(path.string() + ": truncated at offset " +
                          std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(buf[offset]) << 24) |
           (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(buf[offset + 2]) << 8) |
           static_cast<std::uint32_t>(buf[offset + 3]);
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    if (be32(img, 0, images_path) != kImageMagic) {
        throw FormatError(images_path.string() + ": bad magic at offset 0");
    }
    const std::size_t n = be32(img, 4, images_path);
    const std::size_t rows = be32(img, 8, images_path);
    const std::size_t cols = be32(img, 12, images_path);
    if (img.size() != 16 + n * rows * cols) {
        throw FormatError(images_path.string() + ": expected " +
                          std::to_string(16 + n * rows * cols) + " bytes, got " +
                          std::to_string(img.size()));
    }

    if (be32(lab, 0, labels_path) != kLabelMagic) {
        throw FormatError(labels_path.string() + ": bad magic at offset 0");
    }
    const std::size_t n_labels = be32(lab, 4, labels_path);
    if (lab.size() != 8 + n_labels) {
        throw FormatError(labels_path.string() + ": truncated at offset " +
                          std::to_string(lab.size()));
    }
    if (n != n_labels) {
        throw FormatError("image/label count mismatch: " + std::to_string(n) +
                          " vs " + std::to_string(n_labels));
    }

    Dataset ds;
    ds.side = rows;
    if (rows != cols) {
        throw FormatError(images_path.string() + ": non-square images");
    }
    ds.inputs = Tensor(n, rows * cols);
    for (std::size_t i = 0; i < n * rows * cols; ++i) {
        ds.inputs.data()[i] = static_cast<double>(img[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t label = lab[8 + i];
        if (label > 9) {
            throw FormatError(labels_path.string() + ": label byte " +
                              std::to_string(label) + " out of range at offset " +
                              std::to_string(8 + i));
        }
        ds.labels[i] = label;
    }
    const auto [mn, mx] = std::minmax_element(ds.inputs.values().begin(),
                                              ds.inputs.values().end());
    ds.value_bounds = {*mn, *mx};
    return ds;
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + ds.inputs.size());
    push_be32(out, kImageMagic);
    push_be32(out, static_cast<std::uint32_t>(ds.count()));
    push_be32(out, static_cast<std::uint32_t>(ds.side));
    push_be32(out, static_cast<std::uint32_t>(ds.side));
    for (double v : ds.inputs.values()) {
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + ds.labels.size());
    push_be32(out, kLabelMagic);
    push_be32(out, static_cast<std::uint32_t>(ds.count()));
    for (int label : ds.labels) out.push_back(static_cast<std::uint8_t>(label));
    return out;
}

Dataset normalize(const Dataset& ds, std::optional<NormStats> reuse) {
    if (ds.count() == 0) throw DataError("normalize: empty dataset");
    NormStats stats;
    if (reuse) {
        stats = *reuse;
    } else {
        double sum = 0.0;
        for (double v : ds.inputs.values()) sum += v;
        stats.mean = sum / static_cast<double>(ds.inputs.size());
        double sq = 0.0;
        for (double v : ds.inputs.values()) {
            sq += (v - stats.mean) * (v - stats.mean);
        }
        stats.std = std::sqrt(sq / static_cast<double>(ds.inputs.size()));
    }
    if (stats.std == 0.0) {
        throw DataError("normalize: degenerate data (zero variance)");
    }
    Dataset out = ds;
    for (std::size_t i = 0; i < out.inputs.size(); ++i) {
        out.inputs.data()[i] = (out.inputs.data()[i] - stats.mean) / stats.std;
    }
    out.normalized = true;
    out.norm_stats = stats;
    const auto [mn, mx] = std::minmax_element(out.inputs.values().begin(),
                                              out.inputs.values().end());
    out.value_bounds = {*mn, *mx};
    return out;
}

double pixelwise_centered_std(const Dataset& ds) {
    if (ds.count() == 0) {
        throw DataError("pixelwise_centered_std: empty dataset");
    }
    const std::size_t n = ds.count();
    const std::size_t d = ds.dim();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = ds.inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = ds.inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean[j];
            sq += c * c;
        }
    }
    return std::sqrt(sq / static_cast<double>(n * d));
}

Dataset resize_nearest(const Dataset& ds, std::size_t target_side) {
    if (ds.side == 0) throw ArgumentError("resize_nearest: non-image dataset");
    if (target_side < ds.side) {
        throw ArgumentError("resize_nearest: downscaling is unsupported");
    }
    if (target_side == ds.side) return ds;
    const std::size_t src = ds.side;
    const std::size_t dst = target_side;
    Dataset out = ds;
    out.side = dst;
    out.inputs = Tensor(ds.count(), dst * dst);
    // src_index = floor(dst_index * src / dst)
    std::vector<std::size_t> map(dst);
    for (std::size_t i = 0; i < dst; ++i) map[i] = i * src / dst;
    for (std::size_t s = 0; s < ds.count(); ++s) {
        const auto in_row = ds.inputs.row(s);
        auto out_row = out.inputs.row(s);
        for (std::size_t r = 0; r < dst; ++r) {
            for (std::size_t c = 0; c < dst; ++c) {
                out_row[r * dst + c] = in_row[map[r] * src + map[c]];
            }
        }
    }
    return out;
}

Dataset corrupt_gaussian(const Dataset& ds, double variance, RandomSource& rng,
                         std::optional<std::size_t> resize_after) {
    if (variance < 0.0) throw ArgumentError("corrupt_gaussian: negative variance");
    Dataset noisy = ds;
    const double std = std::sqrt(variance);
    for (std::size_t i = 0; i < noisy.inputs.size(); ++i) {
        noisy.inputs.data()[i] += rng.normal(0.0, std);
    }
    if (resize_after) return resize_nearest(noisy, *resize_after);
    return noisy;
}

Dataset spheres_sample(const SpheresSpec& spec, RandomSource& rng, Split split,
                       bool add_test_noise) {
    const std::size_t d = spec.ambient_dim;
    const std::size_t n = (split == Split::Train)
                              ? spec.train_count
                              : 2 * spec.test_count_per_class;
    Dataset ds;
    ds.inputs = Tensor(n, d);
    ds.labels.resize(n);
    const double noise_std = std::sqrt(spec.test_noise_var);
    for (std::size_t i = 0; i < n; ++i) {
        // alternate classes for an exact balance
        const int label = static_cast<int>(i % 2);
        const double radius =
            (label == 0) ? spec.inner_radius : spec.outer_radius;
        auto row = ds.inputs.row(i);
        double norm_sq = 0.0;
        do {
            norm_sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] = rng.normal();
                norm_sq += row[j] * row[j];
            }
        } while (norm_sq == 0.0);
        const double scale = radius / std::sqrt(norm_sq);
        for (std::size_t j = 0; j < d; ++j) row[j] *= scale;
        if (split == Split::Test && add_test_noise) {
            for (std::size_t j = 0; j < d; ++j) {
                row[j] += rng.normal(0.0, noise_std);
            }
        }
        ds.labels[i] = label;
    }
    const auto [mn, mx] = std::minmax_element(ds.inputs.values().begin(),
                                              ds.inputs.values().end());
    ds.value_bounds = {*mn, *mx};
    return ds;
}

}  // namespace bnrl::data
