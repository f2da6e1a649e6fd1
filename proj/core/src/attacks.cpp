#include "bnrl/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace bnrl::attack {

namespace {

void clip_inplace(Tensor& x, const std::optional<std::pair<double, double>>& b) {
    if (!b) return;
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data()[i] = std::clamp(x.data()[i], b->first, b->second);
    }
}

void validate(const AttackConfig& cfg) {
    if (cfg.epsilon < 0.0) throw ArgumentError("attack: negative epsilon");
    if (cfg.iterations < 0) throw ArgumentError("attack: negative iterations");
    if (cfg.step_size > cfg.epsilon) {
        throw ArgumentError("attack: step_size exceeds epsilon");
    }
}

}  // namespace

Tensor input_gradient(nn::Model& model, const Tensor& x,
                      const std::vector<int>& y, nn::LossKind loss_kind) {
    if (model.mode != nn::Mode::Eval) {
        throw ModeError(
            "input_gradient: model must be in eval mode (fixed statistics)");
    }
    return nn::forward_backward(model, x, y, loss_kind).input_grad;
}

Tensor fgsm(nn::Model& model, const Tensor& x, const std::vector<int>& y,
            double epsilon, nn::LossKind loss_kind,
            std::optional<std::pair<double, double>> clip_bounds) {
    if (epsilon < 0.0) throw ArgumentError("fgsm: negative epsilon");
    const Tensor grad = input_gradient(model, x, y, loss_kind);
    Tensor adv = x;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double g = grad.data()[i];
        if (g > 0.0) {
            adv.data()[i] += epsilon;
        } else if (g < 0.0) {
            adv.data()[i] -= epsilon;
        }
    }
    clip_inplace(adv, clip_bounds);
    return adv;
}

Tensor pgd(nn::Model& model, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, nn::LossKind loss_kind, RandomSource* rng) {
    validate(cfg);
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Tensor adv = x;

    if (cfg.random_init) {
        if (rng == nullptr) {
            throw ArgumentError("pgd: random_init requires an rng");
        }
        if (cfg.norm == NormKind::Linf) {
            for (std::size_t i = 0; i < adv.size(); ++i) {
                adv.data()[i] += rng->uniform(-cfg.epsilon, cfg.epsilon);
            }
        } else {
            // uniform in the L2 ball: gaussian direction, radius eps*u^(1/d)
            for (std::size_t i = 0; i < n; ++i) {
                auto row = adv.row(i);
                std::vector<double> dir(d);
                double norm_sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dir[j] = rng->normal();
                    norm_sq += dir[j] * dir[j];
                }
                const double norm = std::sqrt(norm_sq);
                if (norm == 0.0) continue;
                const double radius =
                    cfg.epsilon *
                    std::pow(rng->uniform(), 1.0 / static_cast<double>(d));
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] += radius * dir[j] / norm;
                }
            }
        }
        clip_inplace(adv, cfg.clip_bounds);
    }

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const Tensor grad = input_gradient(model, adv, y, loss_kind);
        if (cfg.norm == NormKind::Linf) {
            for (std::size_t i = 0; i < adv.size(); ++i) {
                const double g = grad.data()[i];
                if (g > 0.0) {
                    adv.data()[i] += cfg.step_size;
                } else if (g < 0.0) {
                    adv.data()[i] -= cfg.step_size;
                }
            }
            // project onto the Linf ball around x
            for (std::size_t i = 0; i < adv.size(); ++i) {
                adv.data()[i] = std::clamp(adv.data()[i],
                                           x.data()[i] - cfg.epsilon,
                                           x.data()[i] + cfg.epsilon);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const auto g = grad.row(i);
                auto row = adv.row(i);
                double norm_sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) norm_sq += g[j] * g[j];
                const double norm = std::sqrt(norm_sq);
                if (norm == 0.0) continue;  // zero gradient: skip this row's step
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] += cfg.step_size * g[j] / norm;
                }
                // project the perturbation onto the L2 ball
                double delta_sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double delta = row[j] - x.at(i, j);
                    delta_sq += delta * delta;
                }
                const double delta_norm = std::sqrt(delta_sq);
                if (delta_norm > cfg.epsilon) {
                    const double scale = cfg.epsilon / delta_norm;
                    for (std::size_t j = 0; j < d; ++j) {
                        row[j] = x.at(i, j) + scale * (row[j] - x.at(i, j));
                    }
                }
            }
        }
        clip_inplace(adv, cfg.clip_bounds);
    }
    return adv;
}

double epsilon_l2_from_linf(double epsilon_inf, std::size_t d) {
    if (d < 1) throw ArgumentError("epsilon_l2_from_linf: d must be >= 1");
    return epsilon_inf * std::sqrt(static_cast<double>(d));
}

}  // namespace bnrl::attack
