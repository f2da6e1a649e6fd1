#pragma once

#include <optional>
#include <utility>

#include "bnrl/nn.hpp"
#include "bnrl/tensor.hpp"

namespace bnrl::attack {

enum class NormKind { Linf, L2 };

struct AttackConfig {
    NormKind norm = NormKind::Linf;
    double epsilon = 0.0;       // budget in normalized-input units
    double step_size = 0.0;     // per-iteration magnitude
    int iterations = 0;
    bool random_init = false;
    std::optional<std::pair<double, double>> clip_bounds;
};

/// BIM is PGD-Linf without random init.
inline AttackConfig bim_config(double epsilon, double step_size, int iterations) {
    AttackConfig cfg;
    cfg.norm = NormKind::Linf;
    cfg.epsilon = epsilon;
    cfg.step_size = step_size;
    cfg.iterations = iterations;
    cfg.random_init = false;
    return cfg;
}

/// Gradient of the mean loss w.r.t. the input batch. The model must be in
/// eval mode (attacks are defined against fixed statistics); parameters are
/// left untouched.
Tensor input_gradient(nn::Model& model, const Tensor& x,
                      const std::vector<int>& y, nn::LossKind loss_kind);

/// x' = clip(x + epsilon * sign(grad)); sign(0) = 0.
Tensor fgsm(nn::Model& model, const Tensor& x, const std::vector<int>& y,
            double epsilon, nn::LossKind loss_kind,
            std::optional<std::pair<double, double>> clip_bounds = {});

/// Iterative ascent with per-example projection onto the epsilon ball around
/// x, clipping after every step. L2 steps follow the normalized gradient; a
/// zero-gradient row skips its step. Pass an rng when random_init is set.
Tensor pgd(nn::Model& model, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, nn::LossKind loss_kind,
           RandomSource* rng = nullptr);

/// epsilon_2 = epsilon_inf * sqrt(d)
double epsilon_l2_from_linf(double epsilon_inf, std::size_t d);

}  // namespace bnrl::attack
