#include "bnrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bnrl::nn {

AffineLayer::AffineLayer(std::size_t in_dim, std::size_t out_dim)
    : in(in_dim),
      out(out_dim),
      weight(out_dim, in_dim),
      bias(out_dim, 0.0),
      grad_weight(out_dim, in_dim),
      grad_bias(out_dim, 0.0),
      velocity_weight(out_dim, in_dim),
      velocity_bias(out_dim, 0.0) {}

BatchNormLayer::BatchNormLayer(std::size_t d, double c_const)
    : dim(d),
      c(c_const),
      gamma(d, 1.0),
      beta(d, 0.0),
      grad_gamma(d, 0.0),
      grad_beta(d, 0.0),
      velocity_gamma(d, 0.0),
      velocity_beta(d, 0.0),
      running_mean(d, 0.0),
      running_var(d, 1.0) {}

Model& Model::add_affine(std::size_t in, std::size_t out) {
    layers.emplace_back(AffineLayer(in, out));
    return *this;
}

Model& Model::add_batchnorm(std::size_t dim, double c) {
    layers.emplace_back(BatchNormLayer(dim, c));
    return *this;
}

Model& Model::add_relu() {
    layers.emplace_back(ReluLayer{});
    return *this;
}

std::size_t Model::input_dim() const {
    for (const auto& layer : layers) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) return a->in;
    }
    return 0;
}

std::size_t Model::output_dim() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        if (const auto* a = std::get_if<AffineLayer>(&*it)) return a->out;
    }
    return 0;
}

namespace {

void fnv_mix(std::uint64_t& h, const double* p, std::size_t n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
}

}  // namespace

std::uint64_t Model::state_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& layer : layers) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            fnv_mix(h, a->weight.data(), a->weight.size());
            fnv_mix(h, a->bias.data(), a->bias.size());
        } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
            fnv_mix(h, b->gamma.data(), b->gamma.size());
            fnv_mix(h, b->beta.data(), b->beta.size());
            fnv_mix(h, b->running_mean.data(), b->running_mean.size());
            fnv_mix(h, b->running_var.data(), b->running_var.size());
        }
    }
    return h;
}

void he_init(RandomSource& rng, Model& model) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto* affine = std::get_if<AffineLayer>(&model.layers[i]);
        if (affine == nullptr) {
            if (auto* bn = std::get_if<BatchNormLayer>(&model.layers[i])) {
                std::fill(bn->gamma.begin(), bn->gamma.end(), 1.0);
                std::fill(bn->beta.begin(), bn->beta.end(), 0.0);
                std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
                std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0);
                bn->batch_count = 0;
                bn->has_cache = false;
            }
            continue;
        }
        // gain 2 when this layer feeds a ReLU, looking through batch norm
        double gain = 1.0;
        for (std::size_t j = i + 1; j < model.layers.size(); ++j) {
            if (std::holds_alternative<BatchNormLayer>(model.layers[j])) continue;
            if (std::holds_alternative<ReluLayer>(model.layers[j])) gain = 2.0;
            break;
        }
        const double std = std::sqrt(gain / static_cast<double>(affine->in));
        for (std::size_t k = 0; k < affine->weight.size(); ++k) {
            affine->weight.data()[k] = rng.normal(0.0, std);
        }
        std::fill(affine->bias.begin(), affine->bias.end(), 0.0);
        affine->velocity_weight = Tensor(affine->out, affine->in);
        std::fill(affine->velocity_bias.begin(), affine->velocity_bias.end(), 0.0);
    }
}

Tensor batchnorm_forward(BatchNormLayer& layer, const Tensor& h, Mode mode) {
    if (h.cols() != layer.dim) {
        throw ShapeError("batchnorm_forward: expected " +
                         std::to_string(layer.dim) + " columns, got " +
                         std::to_string(h.cols()));
    }
    const std::size_t n = h.rows();
    const std::size_t d = layer.dim;
    Tensor out(n, d);

    if (mode == Mode::Eval) {
        std::vector<double> invstd(d);
        for (std::size_t j = 0; j < d; ++j) {
            invstd[j] = 1.0 / std::sqrt(layer.running_var[j] + layer.c);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto in_row = h.row(i);
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                out_row[j] = layer.gamma[j] * (in_row[j] - layer.running_mean[j]) *
                                 invstd[j] +
                             layer.beta[j];
            }
        }
        return out;
    }

    if (n < 2) {
        throw DataError("batchnorm_forward: train mode needs batch size >= 2");
    }
    const ColumnStats stats = column_stats(h);
    layer.cached_invstd.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        layer.cached_invstd[j] = 1.0 / std::sqrt(stats.variances[j] + layer.c);
    }
    layer.cached_xhat = Tensor(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto in_row = h.row(i);
        auto xhat_row = layer.cached_xhat.row(i);
        auto out_row = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xhat_row[j] = (in_row[j] - stats.means[j]) * layer.cached_invstd[j];
            out_row[j] = layer.gamma[j] * xhat_row[j] + layer.beta[j];
        }
    }
    layer.has_cache = true;

    // running statistics with momentum disabled: cumulative average of batch
    // moments; EMA with factor 0.1 as the conventional alternative.
    // Normalization uses the biased 1/B variance of Eq. (1), but the running
    // estimate accumulates the unbiased B/(B-1) variance so that eval-mode
    // statistics are not systematically deflated at small batch sizes.
    const double bessel =
        static_cast<double>(n) / static_cast<double>(n - 1);
    layer.batch_count += 1;
    if (layer.stats_mode == RunningStatsMode::CumulativeAverage) {
        const double w = 1.0 / static_cast<double>(layer.batch_count);
        for (std::size_t j = 0; j < d; ++j) {
            layer.running_mean[j] += w * (stats.means[j] - layer.running_mean[j]);
            layer.running_var[j] +=
                w * (bessel * stats.variances[j] - layer.running_var[j]);
        }
    } else {
        constexpr double kEma = 0.1;
        for (std::size_t j = 0; j < d; ++j) {
            layer.running_mean[j] =
                (1.0 - kEma) * layer.running_mean[j] + kEma * stats.means[j];
            layer.running_var[j] = (1.0 - kEma) * layer.running_var[j] +
                                   kEma * bessel * stats.variances[j];
        }
    }
    return out;
}

BatchNormGrads batchnorm_backward(const BatchNormLayer& layer,
                                  const Tensor& upstream_grad) {
    if (!layer.has_cache) {
        throw StateError("batchnorm_backward: no cached train-mode forward");
    }
    if (!upstream_grad.same_shape(layer.cached_xhat)) {
        throw ShapeError("batchnorm_backward: upstream shape mismatch");
    }
    const std::size_t n = upstream_grad.rows();
    const std::size_t d = layer.dim;
    BatchNormGrads grads;
    grads.gamma_grad.assign(d, 0.0);
    grads.beta_grad.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = upstream_grad.row(i);
        const auto xhat = layer.cached_xhat.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            grads.gamma_grad[j] += g[j] * xhat[j];
            grads.beta_grad[j] += g[j];
        }
    }
    grads.input_grad = Tensor(n, d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = upstream_grad.row(i);
        const auto xhat = layer.cached_xhat.row(i);
        auto out = grads.input_grad.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            out[j] = layer.gamma[j] * layer.cached_invstd[j] *
                     (g[j] - inv_n * grads.beta_grad[j] -
                      xhat[j] * inv_n * grads.gamma_grad[j]);
        }
    }
    return grads;
}

namespace {

Tensor affine_forward(AffineLayer& layer, const Tensor& x, bool cache) {
    if (x.cols() != layer.in) {
        throw ShapeError("affine: expected " + std::to_string(layer.in) +
                         " columns, got " + std::to_string(x.cols()));
    }
    Tensor out = matmul_nt(x, layer.weight);  // (n x in) * (out x in)^T
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        for (std::size_t j = 0; j < layer.out; ++j) row[j] += layer.bias[j];
    }
    if (cache) layer.cached_input = x;
    return out;
}

Tensor relu_forward(ReluLayer& layer, const Tensor& x, bool cache) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    }
    if (cache) layer.cached_input = x;
    return out;
}

Tensor layer_forward(Layer& layer, const Tensor& x, Mode mode, bool cache) {
    if (auto* a = std::get_if<AffineLayer>(&layer)) {
        return affine_forward(*a, x, cache);
    }
    if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
        return batchnorm_forward(*b, x, mode);
    }
    return relu_forward(*std::get_if<ReluLayer>(&layer), x, cache);
}

void check_labels(const std::vector<int>& y, std::size_t n, std::size_t classes,
                  LossKind kind) {
    if (y.size() != n) {
        throw ShapeError("labels: expected " + std::to_string(n) +
                         " labels, got " + std::to_string(y.size()));
    }
    const int upper = (kind == LossKind::Logistic)
                          ? 2
                          : static_cast<int>(classes);
    for (int label : y) {
        if (label < 0 || label >= upper) {
            throw DataError("label " + std::to_string(label) +
                            " out of range [0, " + std::to_string(upper) + ")");
        }
    }
}

/// Softmax cross-entropy on logits; returns mean loss and writes
/// d(mean loss)/d(logits) into grad when non-null.
double softmax_ce(const Tensor& logits, const std::vector<int>& y,
                  Tensor* grad) {
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    double loss = 0.0;
    if (grad != nullptr) *grad = Tensor(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double maxv = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - maxv);
        const double log_sum = std::log(sum) + maxv;
        loss += log_sum - row[static_cast<std::size_t>(y[i])];
        if (grad != nullptr) {
            auto g = grad->row(i);
            for (std::size_t j = 0; j < k; ++j) {
                g[j] = std::exp(row[j] - log_sum) / static_cast<double>(n);
            }
            g[static_cast<std::size_t>(y[i])] -= 1.0 / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

/// Logistic loss zeta(y*s) = log(1 + exp(-y*s)) on a single-column score,
/// labels {0,1} mapped to {-1,+1}.
double logistic_loss(const Tensor& scores, const std::vector<int>& y,
                     Tensor* grad) {
    if (scores.cols() != 1) {
        throw ShapeError("logistic loss expects a single output unit");
    }
    const std::size_t n = scores.rows();
    double loss = 0.0;
    if (grad != nullptr) *grad = Tensor(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = (y[i] == 1) ? 1.0 : -1.0;
        const double z = sign * scores.at(i, 0);
        // log(1 + e^-z), stable for both signs
        loss += (z > 0) ? std::log1p(std::exp(-z))
                        : -z + std::log1p(std::exp(z));
        if (grad != nullptr) {
            const double sigma_neg = 1.0 / (1.0 + std::exp(z));  // sigmoid(-z)
            grad->at(i, 0) = -sign * sigma_neg / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace

Tensor forward(Model& model, const Tensor& x) {
    Tensor h = x;
    for (auto& layer : model.layers) {
        h = layer_forward(layer, h, model.mode, false);
    }
    return h;
}

ForwardBackwardResult forward_backward(Model& model, const Tensor& x,
                                       const std::vector<int>& y,
                                       LossKind loss_kind) {
    check_labels(y, x.rows(), model.output_dim(), loss_kind);
    Tensor h = x;
    for (auto& layer : model.layers) {
        h = layer_forward(layer, h, model.mode, true);
    }

    ForwardBackwardResult result;
    Tensor grad;
    if (loss_kind == LossKind::SoftmaxCrossEntropy) {
        result.loss = softmax_ce(h, y, &grad);
    } else {
        result.loss = logistic_loss(h, y, &grad);
    }

    for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
        if (auto* a = std::get_if<AffineLayer>(&*it)) {
            a->grad_weight = matmul_tn(grad, a->cached_input);  // out x in
            for (std::size_t j = 0; j < a->out; ++j) a->grad_bias[j] = 0.0;
            for (std::size_t i = 0; i < grad.rows(); ++i) {
                const auto g = grad.row(i);
                for (std::size_t j = 0; j < a->out; ++j) a->grad_bias[j] += g[j];
            }
            grad = matmul(grad, a->weight);  // (n x out) * (out x in)
        } else if (auto* b = std::get_if<BatchNormLayer>(&*it)) {
            if (model.mode == Mode::Train) {
                BatchNormGrads grads = batchnorm_backward(*b, grad);
                b->grad_gamma = std::move(grads.gamma_grad);
                b->grad_beta = std::move(grads.beta_grad);
                grad = std::move(grads.input_grad);
            } else {
                // eval-mode batch norm is a fixed per-feature affine map
                for (std::size_t j = 0; j < b->dim; ++j) {
                    b->grad_gamma[j] = 0.0;
                    b->grad_beta[j] = 0.0;
                }
                for (std::size_t i = 0; i < grad.rows(); ++i) {
                    auto g = grad.row(i);
                    for (std::size_t j = 0; j < b->dim; ++j) {
                        g[j] *= b->gamma[j] /
                                std::sqrt(b->running_var[j] + b->c);
                    }
                }
            }
        } else if (auto* r = std::get_if<ReluLayer>(&*it)) {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                if (r->cached_input.data()[i] <= 0.0) grad.data()[i] = 0.0;
            }
        }
    }
    result.input_grad = std::move(grad);
    return result;
}

double evaluate_loss(Model& model, const Tensor& x, const std::vector<int>& y,
                     LossKind loss_kind) {
    check_labels(y, x.rows(), model.output_dim(), loss_kind);
    Tensor logits = forward(model, x);
    return (loss_kind == LossKind::SoftmaxCrossEntropy)
               ? softmax_ce(logits, y, nullptr)
               : logistic_loss(logits, y, nullptr);
}

std::vector<int> predict(Model& model, const Tensor& x, LossKind loss_kind) {
    Tensor logits = forward(model, x);
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (loss_kind == LossKind::Logistic) {
            out[i] = logits.at(i, 0) > 0.0 ? 1 : 0;
        } else {
            const auto row = logits.row(i);
            out[i] = static_cast<int>(
                std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    return out;
}

double accuracy(Model& model, const Tensor& x, const std::vector<int>& y,
                LossKind loss_kind) {
    const std::vector<int> pred = predict(model, x, loss_kind);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

Tensor softmax_outputs(Model& model, const Tensor& x) {
    Tensor logits = forward(model, x);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const double maxv = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - maxv);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
    return logits;
}

void refresh_batchnorm_stats(Model& model, const Tensor& x,
                             std::size_t chunk) {
    if (chunk < 2) {
        throw ArgumentError("refresh_batchnorm_stats: chunk must be >= 2");
    }
    std::vector<RunningStatsMode> saved;
    for (auto& layer : model.layers) {
        if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            saved.push_back(bn->stats_mode);
            bn->stats_mode = RunningStatsMode::CumulativeAverage;
            std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
            std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0);
            bn->batch_count = 0;
        }
    }
    if (saved.empty()) return;
    model.set_mode(Mode::Train);
    for (std::size_t start = 0; start < x.rows(); start += chunk) {
        const std::size_t end = std::min(start + chunk, x.rows());
        if (end - start < 2) break;
        Tensor batch(end - start, x.cols());
        for (std::size_t i = start; i < end; ++i) {
            const auto src = x.row(i);
            std::copy(src.begin(), src.end(), batch.row(i - start).begin());
        }
        forward(model, batch);
    }
    std::size_t k = 0;
    for (auto& layer : model.layers) {
        if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            bn->stats_mode = saved[k++];
        }
    }
    model.set_mode(Mode::Eval);
}

namespace {

void sgd_update(std::vector<double>& param, std::vector<double>& velocity,
                const std::vector<double>& grad, const SgdConfig& cfg) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        param[i] -= cfg.learning_rate * velocity[i];
    }
}

}  // namespace

void sgd_step(Model& model, const SgdConfig& cfg) {
    for (auto& layer : model.layers) {
        if (auto* a = std::get_if<AffineLayer>(&layer)) {
            double decay_scale = 0.0;
            if (cfg.weight_decay > 0.0) {
                if (cfg.decay_style == DecayStyle::SquaredNorm) {
                    decay_scale = cfg.weight_decay;
                } else {
                    double norm_sq = 0.0;
                    for (std::size_t i = 0; i < a->weight.size(); ++i) {
                        norm_sq += a->weight.data()[i] * a->weight.data()[i];
                    }
                    const double norm = std::sqrt(norm_sq);
                    decay_scale = (norm > 0.0) ? cfg.weight_decay / norm : 0.0;
                }
            }
            for (std::size_t i = 0; i < a->weight.size(); ++i) {
                const double g =
                    a->grad_weight.data()[i] + decay_scale * a->weight.data()[i];
                a->velocity_weight.data()[i] =
                    cfg.momentum * a->velocity_weight.data()[i] + g;
                a->weight.data()[i] -=
                    cfg.learning_rate * a->velocity_weight.data()[i];
            }
            sgd_update(a->bias, a->velocity_bias, a->grad_bias, cfg);
        } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            sgd_update(b->gamma, b->velocity_gamma, b->grad_gamma, cfg);
            sgd_update(b->beta, b->velocity_beta, b->grad_beta, cfg);
        }
    }
}

}  // namespace bnrl::nn
