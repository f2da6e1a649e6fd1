#include <filesystem>
#include <fstream>
#include <doctest.h>

#include "bnrl/checkpoint.hpp"

using bnrl::Tensor;
namespace nn = bnrl::nn;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit exact") {
    bnrl::RandomSource rng(77);
    nn::Model model;
    model.add_affine(6, 8);
    model.add_batchnorm(8);
    model.add_relu();
    model.add_affine(8, 3);
    nn::he_init(rng, model);

    // advance running stats so non-default state is persisted
    const Tensor x = bnrl::gaussian(rng, 16, 6, 0.0, 1.0);
    std::vector<int> y(16, 1);
    nn::forward_backward(model, x, y, nn::LossKind::SoftmaxCrossEntropy);

    const auto path = temp_file("bnrl_roundtrip.bnrl");
    nn::save_model(path, model);
    nn::Model loaded = nn::load_model(path);
    CHECK(loaded.state_checksum() == model.state_checksum());
    CHECK(loaded.layers.size() == model.layers.size());
    const auto& bn = std::get<nn::BatchNormLayer>(model.layers[1]);
    const auto& bn2 = std::get<nn::BatchNormLayer>(loaded.layers[1]);
    CHECK(bn2.batch_count == bn.batch_count);
    CHECK(bn2.running_mean == bn.running_mean);
    CHECK(bn2.c == bn.c);

    // loaded model computes identical outputs
    loaded.set_mode(nn::Mode::Eval);
    model.set_mode(nn::Mode::Eval);
    CHECK(nn::forward(loaded, x) == nn::forward(model, x));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupt files") {
    const auto path = temp_file("bnrl_corrupt.bnrl");
    SUBCASE("bad magic") {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE00000000";
        out.close();
        CHECK_THROWS_AS(nn::load_model(path), bnrl::FormatError);
    }
    SUBCASE("truncated body") {
        bnrl::RandomSource rng(78);
        nn::Model model;
        model.add_affine(4, 4);
        nn::he_init(rng, model);
        nn::save_model(path, model);
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size / 2);
        CHECK_THROWS_AS(nn::load_model(path), bnrl::FormatError);
    }
    std::filesystem::remove(path);
}
