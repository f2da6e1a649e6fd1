// Microbenchmarks for the hot paths: GEMM, batch-norm forward, PGD steps.

#include <benchmark/benchmark.h>

#include "bnrl/attacks.hpp"
#include "bnrl/nn.hpp"
#include "bnrl/tensor.hpp"

namespace {

void BM_Matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    bnrl::RandomSource rng(1);
    const bnrl::Tensor a = bnrl::gaussian(rng, n, n, 0.0, 1.0);
    const bnrl::Tensor b = bnrl::gaussian(rng, n, n, 0.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bnrl::matmul(a, b));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512)->Arg(1024);

void BM_BatchNormForward(benchmark::State& state) {
    const std::size_t batch = static_cast<std::size_t>(state.range(0));
    bnrl::RandomSource rng(1);
    const bnrl::Tensor x = bnrl::gaussian(rng, batch, 384, 0.0, 1.0);
    bnrl::nn::BatchNormLayer layer(384);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            bnrl::nn::batchnorm_forward(layer, x, bnrl::nn::Mode::Train));
    }
}
BENCHMARK(BM_BatchNormForward)->Arg(10)->Arg(100)->Arg(1000);

void BM_PgdLinear(benchmark::State& state) {
    bnrl::RandomSource rng(1);
    bnrl::nn::Model model;
    model.add_affine(784, 10);
    bnrl::nn::he_init(rng, model);
    model.set_mode(bnrl::nn::Mode::Eval);
    const bnrl::Tensor x = bnrl::gaussian(rng, 256, 784, 0.0, 1.0);
    std::vector<int> y(256);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 10);
    const auto cfg = bnrl::attack::bim_config(0.1, 1e-2, 10);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bnrl::attack::pgd(
            model, x, y, cfg, bnrl::nn::LossKind::SoftmaxCrossEntropy));
    }
}
BENCHMARK(BM_PgdLinear);

}  // namespace

BENCHMARK_MAIN();
