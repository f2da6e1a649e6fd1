#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bnrl/tensor.hpp"

namespace bnrl::nn {

enum class Mode { Train, Eval };
enum class LossKind { SoftmaxCrossEntropy, Logistic };

struct AffineLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Tensor weight;  // out x in
    std::vector<double> bias;
    Tensor grad_weight;
    std::vector<double> grad_bias;
    Tensor velocity_weight;
    std::vector<double> velocity_bias;

    Tensor cached_input;  // train-time cache for backward

    AffineLayer(std::size_t in_dim, std::size_t out_dim);
};

enum class RunningStatsMode {
    CumulativeAverage,       // plain average of all batch moments seen
    ExponentialMovingAverage  // factor 0.1 toward the current batch
};

struct BatchNormLayer {
    std::size_t dim = 0;
    double c = 1e-3;
    RunningStatsMode stats_mode = RunningStatsMode::CumulativeAverage;
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> grad_gamma;
    std::vector<double> grad_beta;
    std::vector<double> velocity_gamma;
    std::vector<double> velocity_beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    std::uint64_t batch_count = 0;

    // backward cache from the last train-mode forward
    Tensor cached_xhat;
    std::vector<double> cached_invstd;
    bool has_cache = false;

    explicit BatchNormLayer(std::size_t d, double c_const = 1e-3);
};

struct ReluLayer {
    Tensor cached_input;
};

using Layer = std::variant<AffineLayer, BatchNormLayer, ReluLayer>;

/// Ordered layer stack. Single-owner mutable state while training; an
/// eval-mode model used read-only may be shared across threads.
struct Model {
    std::vector<Layer> layers;
    Mode mode = Mode::Train;

    void set_mode(Mode m) { mode = m; }
    Model& add_affine(std::size_t in, std::size_t out);
    Model& add_batchnorm(std::size_t dim, double c = 1e-3);
    Model& add_relu();

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    /// FNV-1a over every parameter and running-stat byte; used by tests to
    /// assert attacks leave the model untouched.
    std::uint64_t state_checksum() const;
};

/// He initialization: affine weights N(0, gain/fan_in) with gain 2 when the
/// layer feeds a ReLU (looking through batch norm) and 1 otherwise; zero
/// biases; batch-norm gamma=1, beta=0, running stats (0, 1).
void he_init(RandomSource& rng, Model& model);

struct BatchNormGrads {
    Tensor input_grad;
    std::vector<double> gamma_grad;
    std::vector<double> beta_grad;
};

/// Train mode normalizes by batch moments and updates running statistics;
/// eval mode substitutes the running statistics. Train mode requires
/// batch size >= 2.
Tensor batchnorm_forward(BatchNormLayer& layer, const Tensor& h, Mode mode);

/// Analytic gradients w.r.t. inputs, gamma, beta for the cached train-mode
/// forward. Throws StateError without a cached forward.
BatchNormGrads batchnorm_backward(const BatchNormLayer& layer,
                                  const Tensor& upstream_grad);

/// Logits of the model on a batch; caches are populated for backward only in
/// train mode calls through forward_backward.
Tensor forward(Model& model, const Tensor& x);

struct ForwardBackwardResult {
    double loss = 0.0;
    Tensor input_grad;
};

/// Mean loss over the batch plus gradients of that mean loss w.r.t. every
/// parameter (stored in the layers' grad buffers) and the input.
ForwardBackwardResult forward_backward(Model& model, const Tensor& x,
                                       const std::vector<int>& y,
                                       LossKind loss_kind);

/// Mean loss without touching gradient state or batch-norm caches.
double evaluate_loss(Model& model, const Tensor& x, const std::vector<int>& y,
                     LossKind loss_kind);

std::vector<int> predict(Model& model, const Tensor& x, LossKind loss_kind);
double accuracy(Model& model, const Tensor& x, const std::vector<int>& y,
                LossKind loss_kind);

/// Row-wise softmax of the model logits (eval helper for entropy estimation).
Tensor softmax_outputs(Model& model, const Tensor& x);

/// Replaces the batch-norm running statistics with population statistics of
/// the current weights, accumulated over `x` in chunks (inference procedure
/// of the original batch-norm algorithm). Leaves the model in eval mode.
/// No-op for models without batch norm.
void refresh_batchnorm_stats(Model& model, const Tensor& x,
                             std::size_t chunk = 1000);

enum class DecayStyle {
    SquaredNorm,   // gradient contribution lambda * w
    UnsquaredNorm  // gradient contribution lambda * w / ||w||_2
};

struct SgdConfig {
    double learning_rate = 1e-2;
    double momentum = 0.0;
    double weight_decay = 0.0;
    DecayStyle decay_style = DecayStyle::SquaredNorm;
};

/// v <- momentum*v + (grad + decay); w <- w - lr*v. Weight decay applies to
/// affine weights only, never to biases, gamma, or beta.
void sgd_step(Model& model, const SgdConfig& cfg);

}  // namespace bnrl::nn
