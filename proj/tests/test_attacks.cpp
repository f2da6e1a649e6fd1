#include <cmath>
#include <doctest.h>

#include "bnrl/attacks.hpp"
#include "bnrl/nn.hpp"

using bnrl::RandomSource;
using bnrl::Tensor;
namespace nn = bnrl::nn;
namespace attack = bnrl::attack;

namespace {

nn::Model make_linear(RandomSource& rng, std::size_t d, std::size_t k) {
    nn::Model model;
    model.add_affine(d, k);
    nn::he_init(rng, model);
    model.set_mode(nn::Mode::Eval);
    return model;
}

double linf_dist(const Tensor& a, const Tensor& b, std::size_t row) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        m = std::max(m, std::abs(a.at(row, j) - b.at(row, j)));
    }
    return m;
}

double l2_dist(const Tensor& a, const Tensor& b, std::size_t row) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const double d = a.at(row, j) - b.at(row, j);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("attacks require eval mode") {
    RandomSource rng(1);
    auto model = make_linear(rng, 4, 3);
    model.set_mode(nn::Mode::Train);
    const Tensor x = bnrl::gaussian(rng, 2, 4, 0.0, 1.0);
    CHECK_THROWS_AS(
        attack::fgsm(model, x, {0, 1}, 0.1, nn::LossKind::SoftmaxCrossEntropy),
        bnrl::ModeError);
}

TEST_CASE("fgsm perturbs by exactly epsilon with sign(0) = 0") {
    RandomSource rng(2);
    auto model = make_linear(rng, 5, 3);
    // Zero the weight column for feature 4: its gradient is exactly zero and
    // the perturbation there must be zero too.
    auto& aff = std::get<nn::AffineLayer>(model.layers[0]);
    for (std::size_t i = 0; i < 3; ++i) aff.weight.at(i, 4) = 0.0;

    const Tensor x = bnrl::gaussian(rng, 6, 5, 0.0, 1.0);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const double eps = 0.25;
    const Tensor adv =
        attack::fgsm(model, x, y, eps, nn::LossKind::SoftmaxCrossEntropy);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            const double delta = std::abs(adv.at(i, j) - x.at(i, j));
            CHECK((delta == doctest::Approx(eps) || delta == 0.0));
        }
        CHECK(adv.at(i, 4) == x.at(i, 4));
    }
}

TEST_CASE("fgsm respects clip bounds") {
    RandomSource rng(3);
    auto model = make_linear(rng, 4, 2);
    const Tensor x{{0.95, 0.0, -0.95, 0.5}};
    const Tensor adv = attack::fgsm(model, x, {0}, 0.2,
                                    nn::LossKind::SoftmaxCrossEntropy,
                                    std::make_pair(-1.0, 1.0));
    for (double v : adv.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("fgsm does not mutate the model") {
    RandomSource rng(4);
    auto model = make_linear(rng, 6, 3);
    const auto checksum = model.state_checksum();
    const Tensor x = bnrl::gaussian(rng, 4, 6, 0.0, 1.0);
    attack::fgsm(model, x, {0, 1, 2, 0}, 0.1,
                 nn::LossKind::SoftmaxCrossEntropy);
    CHECK(model.state_checksum() == checksum);
}

TEST_CASE("fgsm beats random sign perturbations on a linear model") {
    // FGSM is the optimal first-order l-inf attack for linear models; any
    // random sign vector at the same budget must do no better (acceptance
    // runs the 100-trial version).
    RandomSource rng(5);
    auto model = make_linear(rng, 10, 4);
    const Tensor x = bnrl::gaussian(rng, 16, 10, 0.0, 1.0);
    std::vector<int> y(16);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<int>(rng.next_u64() % 4);
    }
    const double eps = 0.3;
    const auto loss_kind = nn::LossKind::SoftmaxCrossEntropy;
    const Tensor adv = attack::fgsm(model, x, y, eps, loss_kind);
    const double fgsm_loss = nn::evaluate_loss(model, adv, y, loss_kind);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor randomized = x;
        for (std::size_t i = 0; i < randomized.size(); ++i) {
            randomized.data()[i] +=
                (rng.next_u64() & 1) ? eps : -eps;
        }
        CHECK(nn::evaluate_loss(model, randomized, y, loss_kind) <=
              fgsm_loss + 1e-12);
    }
}

TEST_CASE("pgd validates its configuration") {
    RandomSource rng(6);
    auto model = make_linear(rng, 4, 2);
    const Tensor x = bnrl::gaussian(rng, 2, 4, 0.0, 1.0);
    attack::AttackConfig cfg;
    cfg.epsilon = -0.1;
    cfg.step_size = 0.01;
    cfg.iterations = 5;
    CHECK_THROWS_AS(
        attack::pgd(model, x, {0, 1}, cfg, nn::LossKind::SoftmaxCrossEntropy),
        bnrl::ArgumentError);
    cfg.epsilon = 0.1;
    cfg.iterations = -1;
    CHECK_THROWS_AS(
        attack::pgd(model, x, {0, 1}, cfg, nn::LossKind::SoftmaxCrossEntropy),
        bnrl::ArgumentError);
    cfg.iterations = 5;
    cfg.step_size = 0.2;  // step larger than the ball
    CHECK_THROWS_AS(
        attack::pgd(model, x, {0, 1}, cfg, nn::LossKind::SoftmaxCrossEntropy),
        bnrl::ArgumentError);
    cfg.step_size = 0.05;
    cfg.random_init = true;  // rng required
    CHECK_THROWS_AS(
        attack::pgd(model, x, {0, 1}, cfg, nn::LossKind::SoftmaxCrossEntropy),
        bnrl::ArgumentError);
}

TEST_CASE("pgd iterates stay inside the epsilon ball") {
    RandomSource rng(7);
    auto model = make_linear(rng, 8, 3);
    const Tensor x = bnrl::gaussian(rng, 12, 8, 0.0, 1.0);
    std::vector<int> y(12);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<int>(rng.next_u64() % 3);
    }
    const auto loss_kind = nn::LossKind::SoftmaxCrossEntropy;

    SUBCASE("l-inf, deterministic and random init, every iteration count") {
        for (const bool random_init : {false, true}) {
            for (const int iters : {1, 2, 5, 17}) {
                attack::AttackConfig cfg;
                cfg.norm = attack::NormKind::Linf;
                cfg.epsilon = 0.2;
                cfg.step_size = 0.05;
                cfg.iterations = iters;
                cfg.random_init = random_init;
                RandomSource attack_rng(100 + iters);
                const Tensor adv = attack::pgd(model, x, y, cfg, loss_kind,
                                               random_init ? &attack_rng
                                                           : nullptr);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    CHECK(linf_dist(adv, x, i) <= cfg.epsilon + 1e-12);
                }
            }
        }
    }
    SUBCASE("l2 ball with random init") {
        attack::AttackConfig cfg;
        cfg.norm = attack::NormKind::L2;
        cfg.epsilon = 0.7;
        cfg.step_size = 0.2;
        cfg.iterations = 10;
        cfg.random_init = true;
        RandomSource attack_rng(55);
        const Tensor adv =
            attack::pgd(model, x, y, cfg, loss_kind, &attack_rng);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            CHECK(l2_dist(adv, x, i) <= cfg.epsilon + 1e-9);
        }
    }
    SUBCASE("clip bounds hold after every step") {
        attack::AttackConfig cfg;
        cfg.norm = attack::NormKind::Linf;
        cfg.epsilon = 0.5;
        cfg.step_size = 0.1;
        cfg.iterations = 10;
        cfg.clip_bounds = {-1.0, 1.0};
        const Tensor adv = attack::pgd(model, x, y, cfg, loss_kind);
        for (double v : adv.values()) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("bim is pgd-linf without random init") {
    const auto cfg = attack::bim_config(0.1, 1e-3, 100);
    CHECK(cfg.norm == attack::NormKind::Linf);
    CHECK(cfg.epsilon == 0.1);
    CHECK(cfg.step_size == 1e-3);
    CHECK(cfg.iterations == 100);
    CHECK_FALSE(cfg.random_init);
    CHECK_FALSE(cfg.clip_bounds.has_value());
}

TEST_CASE("bim increases the loss on a trained-direction model") {
    RandomSource rng(8);
    auto model = make_linear(rng, 6, 3);
    const Tensor x = bnrl::gaussian(rng, 10, 6, 0.0, 1.0);
    std::vector<int> y(10);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<int>(rng.next_u64() % 3);
    }
    const auto loss_kind = nn::LossKind::SoftmaxCrossEntropy;
    const double clean = nn::evaluate_loss(model, x, y, loss_kind);
    const Tensor adv = attack::pgd(model, x, y,
                                   attack::bim_config(0.3, 0.05, 20),
                                   loss_kind);
    CHECK(nn::evaluate_loss(model, adv, y, loss_kind) > clean);
}

TEST_CASE("epsilon_l2_from_linf scales with sqrt(d)") {
    CHECK(attack::epsilon_l2_from_linf(0.1, 784) ==
          doctest::Approx(0.1 * 28.0));
    CHECK(attack::epsilon_l2_from_linf(0.0, 100) == 0.0);
}

TEST_CASE("input_gradient matches the fgsm direction") {
    RandomSource rng(9);
    auto model = make_linear(rng, 5, 2);
    const Tensor x = bnrl::gaussian(rng, 3, 5, 0.0, 1.0);
    const std::vector<int> y{0, 1, 0};
    const Tensor g = attack::input_gradient(model, x, y,
                                            nn::LossKind::SoftmaxCrossEntropy);
    const Tensor adv =
        attack::fgsm(model, x, y, 0.1, nn::LossKind::SoftmaxCrossEntropy);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double delta = adv.data()[i] - x.data()[i];
        if (g.data()[i] > 0.0) CHECK(delta == doctest::Approx(0.1));
        else if (g.data()[i] < 0.0) CHECK(delta == doctest::Approx(-0.1));
        else CHECK(delta == 0.0);
    }
}
