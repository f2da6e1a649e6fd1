#include "bnrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "bnrl/errors.hpp"

namespace bnrl::nn {

namespace {

constexpr char kMagic[4] = {'B', 'N', 'R', 'L'};
constexpr std::uint32_t kVersion = 1;

// Layer kind tags in the file
constexpr std::uint32_t kAffine = 0;
constexpr std::uint32_t kBatchNorm = 1;
constexpr std::uint32_t kRelu = 2;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

void write_f64s(std::ostream& out, const double* p, std::size_t n) {
    // x86-64 is little-endian; doubles are written verbatim
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw FormatError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void read_f64s(std::istream& in, double* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
    if (!in) throw FormatError("checkpoint: truncated parameter block");
}

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot open " + path.string());
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& layer : model.layers) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            write_u32(out, kAffine);
            write_u32(out, static_cast<std::uint32_t>(a->out));
            write_u32(out, static_cast<std::uint32_t>(a->in));
            write_f64s(out, a->weight.data(), a->weight.size());
            write_f64s(out, a->bias.data(), a->bias.size());
        } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
            write_u32(out, kBatchNorm);
            write_u32(out, static_cast<std::uint32_t>(b->dim));
            write_u32(out, b->stats_mode == RunningStatsMode::CumulativeAverage
                               ? 0u
                               : 1u);
            write_f64s(out, &b->c, 1);
            write_u64(out, b->batch_count);
            write_f64s(out, b->gamma.data(), b->dim);
            write_f64s(out, b->beta.data(), b->dim);
            write_f64s(out, b->running_mean.data(), b->dim);
            write_f64s(out, b->running_var.data(), b->dim);
        } else {
            write_u32(out, kRelu);
        }
    }
    if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " +
                          std::to_string(version));
    }
    const std::uint32_t count = read_u32(in);
    Model model;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t kind = read_u32(in);
        if (kind == kAffine) {
            const std::uint32_t out_dim = read_u32(in);
            const std::uint32_t in_dim = read_u32(in);
            AffineLayer a(in_dim, out_dim);
            read_f64s(in, a.weight.data(), a.weight.size());
            read_f64s(in, a.bias.data(), a.bias.size());
            model.layers.emplace_back(std::move(a));
        } else if (kind == kBatchNorm) {
            const std::uint32_t dim = read_u32(in);
            const std::uint32_t mode = read_u32(in);
            double c = 0.0;
            read_f64s(in, &c, 1);
            BatchNormLayer b(dim, c);
            b.stats_mode = (mode == 0) ? RunningStatsMode::CumulativeAverage
                                       : RunningStatsMode::ExponentialMovingAverage;
            b.batch_count = read_u64(in);
            read_f64s(in, b.gamma.data(), dim);
            read_f64s(in, b.beta.data(), dim);
            read_f64s(in, b.running_mean.data(), dim);
            read_f64s(in, b.running_var.data(), dim);
            model.layers.emplace_back(std::move(b));
        } else if (kind == kRelu) {
            model.layers.emplace_back(ReluLayer{});
        } else {
            throw FormatError("checkpoint: unknown layer kind " +
                              std::to_string(kind));
        }
    }
    return model;
}

}  // namespace bnrl::nn
