#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <doctest.h>

#include "bnrl/data.hpp"

using bnrl::Tensor;
namespace data = bnrl::data;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_bytes(const std::filesystem::path& path,
                 const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// Minimal hand-built IDX pair: two 2x2 images with labels 3 and 9.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> tiny_idx() {
    std::vector<std::uint8_t> images{
        0x00, 0x00, 0x08, 0x03,  // magic 0x803
        0x00, 0x00, 0x00, 0x02,  // 2 images
        0x00, 0x00, 0x00, 0x02,  // 2 rows
        0x00, 0x00, 0x00, 0x02,  // 2 cols
        0,    255,  128,  64,    // image 0
        10,   20,   30,   40,    // image 1
    };
    std::vector<std::uint8_t> labels{
        0x00, 0x00, 0x08, 0x01,  // magic 0x801
        0x00, 0x00, 0x00, 0x02,  // 2 labels
        3,    9,
    };
    return {images, labels};
}

}  // namespace

TEST_CASE("idx decoding and round-trip") {
    const auto [images, labels] = tiny_idx();
    const auto img_path = temp_file("bnrl_test_images.idx");
    const auto lbl_path = temp_file("bnrl_test_labels.idx");
    write_bytes(img_path, images);
    write_bytes(lbl_path, labels);

    const auto ds = data::load_mnist_idx(img_path, lbl_path);
    CHECK(ds.count() == 2);
    CHECK(ds.dim() == 4);
    CHECK(ds.side == 2);
    CHECK(ds.labels == std::vector<int>{3, 9});
    CHECK(ds.inputs.at(0, 0) == 0.0);
    CHECK(ds.inputs.at(0, 1) == doctest::Approx(1.0));
    CHECK(ds.inputs.at(0, 2) == doctest::Approx(128.0 / 255.0));
    CHECK_FALSE(ds.normalized);

    CHECK(data::encode_idx_images(ds) == images);
    CHECK(data::encode_idx_labels(ds) == labels);

    std::filesystem::remove(img_path);
    std::filesystem::remove(lbl_path);
}

TEST_CASE("idx rejects bad magic and truncation") {
    auto [images, labels] = tiny_idx();
    const auto img_path = temp_file("bnrl_bad_images.idx");
    const auto lbl_path = temp_file("bnrl_bad_labels.idx");

    SUBCASE("bad magic") {
        images[3] = 0x01;
        write_bytes(img_path, images);
        write_bytes(lbl_path, labels);
        CHECK_THROWS_AS(data::load_mnist_idx(img_path, lbl_path),
                        bnrl::FormatError);
    }
    SUBCASE("truncated pixel data") {
        images.pop_back();
        write_bytes(img_path, images);
        write_bytes(lbl_path, labels);
        CHECK_THROWS_AS(data::load_mnist_idx(img_path, lbl_path),
                        bnrl::FormatError);
    }
    SUBCASE("label out of range") {
        labels.back() = 12;
        write_bytes(img_path, images);
        write_bytes(lbl_path, labels);
        CHECK_THROWS_AS(data::load_mnist_idx(img_path, lbl_path),
                        bnrl::FormatError);
    }
    std::filesystem::remove(img_path);
    std::filesystem::remove(lbl_path);
}

TEST_CASE("normalize produces zero mean unit variance") {
    data::Dataset ds;
    ds.inputs = Tensor{{0.0, 1.0}, {2.0, 3.0}};
    ds.labels = {0, 1};
    ds.side = 0;
    const auto norm = data::normalize(ds);
    CHECK(norm.normalized);
    double sum = 0.0, ss = 0.0;
    for (double v : norm.inputs.values()) {
        sum += v;
        ss += v * v;
    }
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ss / 4.0 == doctest::Approx(1.0).epsilon(1e-12));

    SUBCASE("reuse of training statistics") {
        data::Dataset other = ds;
        other.inputs = Tensor{{4.0, 4.0}, {4.0, 4.0}};
        const auto reused = data::normalize(other, norm.norm_stats);
        CHECK(reused.norm_stats.mean == norm.norm_stats.mean);
        CHECK(reused.inputs.at(0, 0) ==
              doctest::Approx((4.0 - 1.5) / norm.norm_stats.std));
    }
    SUBCASE("zero variance rejected") {
        data::Dataset flat = ds;
        flat.inputs = Tensor{{1.0, 1.0}, {1.0, 1.0}};
        CHECK_THROWS_AS(data::normalize(flat), bnrl::DataError);
    }
}

TEST_CASE("nearest-neighbor upscaling replicates pixels") {
    data::Dataset ds;
    ds.inputs = Tensor{{1.0, 2.0, 3.0, 4.0}};  // one 2x2 image
    ds.labels = {0};
    ds.side = 2;

    SUBCASE("integer factor is exact block replication") {
        const auto up = data::resize_nearest(ds, 4);
        CHECK(up.side == 4);
        const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2,
                                       3, 3, 4, 4, 3, 3, 4, 4};
        CHECK(up.inputs.values() == want);
    }
    SUBCASE("non-integer factor follows floor(dst*src/dst)") {
        const auto up = data::resize_nearest(ds, 3);
        // map[i] = floor(i * 2 / 3) -> {0, 0, 1}
        const std::vector<double> want{1, 1, 2, 1, 1, 2, 3, 3, 4};
        CHECK(up.inputs.values() == want);
    }
    SUBCASE("identity resize") {
        const auto same = data::resize_nearest(ds, 2);
        CHECK(same.inputs == ds.inputs);
    }
    SUBCASE("downscaling unsupported") {
        CHECK_THROWS_AS(data::resize_nearest(ds, 1), bnrl::ArgumentError);
    }
    SUBCASE("non-image data rejected") {
        data::Dataset flat = ds;
        flat.side = 0;
        CHECK_THROWS_AS(data::resize_nearest(flat, 4), bnrl::ArgumentError);
    }
}

TEST_CASE("gaussian corruption has the requested variance") {
    bnrl::RandomSource rng(13);
    data::Dataset ds;
    ds.inputs = Tensor(100, 100);  // all zeros
    ds.labels.assign(100, 0);
    ds.side = 10;
    const auto noisy = data::corrupt_gaussian(ds, 0.25, rng);
    double sum = 0.0, ss = 0.0;
    for (double v : noisy.inputs.values()) {
        sum += v;
        ss += v * v;
    }
    const double n = static_cast<double>(noisy.inputs.size());
    CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
    CHECK(ss / n == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("noise-then-upscale keeps noise constant within blocks") {
    bnrl::RandomSource rng(14);
    data::Dataset ds;
    ds.inputs = Tensor(4, 4);  // 2x2 zero images
    ds.labels.assign(4, 0);
    ds.side = 2;
    const auto noisy = data::corrupt_gaussian(ds, 1.0, rng, 4);
    CHECK(noisy.side == 4);
    // noise drawn at 2x2 then replicated into 2x2 blocks of the 4x4 image
    for (std::size_t i = 0; i < noisy.count(); ++i) {
        const auto row = noisy.inputs.row(i);
        CHECK(row[0] == row[1]);
        CHECK(row[0] == row[4]);
        CHECK(row[0] == row[5]);
        CHECK(row[2] == row[3]);
        CHECK(row[0] != row[2]);  // independent draws across blocks
    }
}

TEST_CASE("spheres sampling") {
    bnrl::RandomSource rng(15);
    data::SpheresSpec spec;

    SUBCASE("train split: exact radii, alternating labels") {
        const auto train =
            data::spheres_sample(spec, rng, data::Split::Train);
        CHECK(train.count() == 500);
        CHECK(train.dim() == 2);
        int inner = 0;
        for (std::size_t i = 0; i < train.count(); ++i) {
            const double r = std::hypot(train.inputs.at(i, 0),
                                        train.inputs.at(i, 1));
            const double want = train.labels[i] == 0 ? 1.0 : 1.3;
            CHECK(r == doctest::Approx(want).epsilon(1e-12));
            CHECK(train.labels[i] == static_cast<int>(i % 2));
            inner += train.labels[i] == 0;
        }
        CHECK(inner == 250);
    }
    SUBCASE("test split with noise") {
        const auto test = data::spheres_sample(spec, rng, data::Split::Test,
                                               true);
        CHECK(test.count() == 20000);
        // Noise var 0.005 per coordinate: mean squared radial deviation from
        // the class radius is about 2*0.005.
        double dev = 0.0;
        for (std::size_t i = 0; i < test.count(); ++i) {
            const double r = std::hypot(test.inputs.at(i, 0),
                                        test.inputs.at(i, 1));
            const double want = test.labels[i] == 0 ? 1.0 : 1.3;
            dev += (r - want) * (r - want);
        }
        CHECK(dev / 20000.0 < 3.0 * 0.005);
        CHECK(dev / 20000.0 > 0.001);
    }
    SUBCASE("noise-free test split lies exactly on the spheres") {
        const auto test = data::spheres_sample(spec, rng, data::Split::Test,
                                               false);
        for (std::size_t i = 0; i < 100; ++i) {
            const double r = std::hypot(test.inputs.at(i, 0),
                                        test.inputs.at(i, 1));
            const double want = test.labels[i] == 0 ? 1.0 : 1.3;
            CHECK(r == doctest::Approx(want).epsilon(1e-12));
        }
    }
}
