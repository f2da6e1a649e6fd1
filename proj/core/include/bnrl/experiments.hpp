#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnrl/data.hpp"
#include "bnrl/nn.hpp"

namespace bnrl::expt {

using nlohmann::json;

/// One (experiment, seed, condition, metric) measurement.
struct ResultRecord {
    std::string experiment;
    std::uint64_t seed = 0;
    json condition;
    std::string metric;
    double value = 0.0;
};

struct SummaryStat {
    double mean = 0.0;
    double sem = 0.0;  // sample std (n-1 divisor) / sqrt(n); 0 for n == 1
    std::size_t n = 0;
};

struct SummaryRow {
    json group;
    std::string metric;
    SummaryStat stat;
};

SummaryStat summarize_values(const std::vector<double>& values);

/// Groups records by (experiment, the listed condition keys, metric) and
/// reports mean +- SEM per group. An empty key list groups by the full
/// condition object.
std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records,
                                  const std::vector<std::string>& group_keys);

void write_results_csv(const std::filesystem::path& path,
                       const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<SummaryRow>& rows);

/// Raw [0,1]-scaled MNIST splits at 28x28 plus the scalar normalization
/// statistics fit on the training split. Experiments resize and normalize
/// per batch so the large-d variants never materialize in full.
struct MnistContext {
    data::Dataset train_raw;  // 60000 x 784, pixel range [0,1]
    data::Dataset test_raw;   // 10000 x 784
    data::NormStats stats;    // fit on train_raw
    double pixelwise_std = 0.0;  // data::pixelwise_centered_std(train_raw)
};

MnistContext load_mnist_context(const std::filesystem::path& data_dir);

/// Unit system in which a spec's attack budgets (epsilon, BIM step) and
/// noise variances are expressed. Inputs themselves are always scalar-
/// normalized; budgets are converted into those units before use.
enum class AttackUnits {
    Normalized,  // already in scalar-normalized units (factor 1)
    Pixelwise,   // per-pixel-centered units; factor pixelwise_std / stats.std
    RawPixel,    // raw [0,1] pixel units; factor 1 / stats.std
};

/// Multiplier taking an L-inf budget from `units` into scalar-normalized
/// input units (noise variances scale by its square).
double attack_unit_scale(AttackUnits units, const MnistContext& mnist);

AttackUnits attack_units_from_string(const std::string& name);
std::string to_string(AttackUnits units);

// ---------------------------------------------------------------------------
// Experiment specs. Defaults reproduce the reference settings; every field is
// overridable from the CLI config file.
// ---------------------------------------------------------------------------

struct InputDimSpec {
    std::vector<std::size_t> widths{28, 56, 84, 112};
    // lambda != 0 rows per width, run in addition to the lambda = 0 row
    std::map<std::size_t, double> decay_rows{{56, 0.01}, {84, 0.0225},
                                             {112, 0.05}};
    int epochs = 50;
    double learning_rate = 1e-2;
    double momentum = 0.0;
    std::size_t batch = 128;
    std::vector<double> fgsm_epsilons{0.05, 0.1};
    // The reference tables quote epsilon in per-pixel-centered units (the
    // linear row reproduces to four digits under that reading and under no
    // other probed convention); see attack_unit_scale.
    AttackUnits attack_units = AttackUnits::Pixelwise;
    nn::DecayStyle decay_style = nn::DecayStyle::SquaredNorm;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Linear softmax model on resized MNIST; clean/FGSM accuracy and loss per
/// (width, lambda, seed), ratio metrics vs the same-seed width-28 lambda=0
/// baseline, and the sqrt(d/d0) prediction.
std::vector<ResultRecord> run_input_dim(const InputDimSpec& spec,
                                        const MnistContext& mnist,
                                        std::size_t threads = 1);

/// sqrt(d / d0)
double predicted_damage(std::size_t d, std::size_t d0);

struct MlpBnSpec {
    std::vector<std::size_t> widths{28, 56, 84};
    std::vector<bool> batch_norm{false, true};
    // weight decay per width; widths not listed train with lambda = 0
    std::map<std::size_t, double> lambda_per_width;
    bool constant_width = false;  // both hidden layers d/2 instead of (d/2, d/4)
    int epochs = 50;
    double learning_rate = 1e-2;
    // momentum 0.9: without it the no-BN nets plateau far short of the
    // reference BIM robustness (dose-response probes, width 28)
    double momentum = 0.9;
    std::size_t batch = 128;
    double noise_var = 1.0;
    double bim_epsilon = 0.1;
    double bim_step = 1e-3;
    int bim_iterations = 100;
    AttackUnits attack_units = AttackUnits::Pixelwise;
    // 0 = attack/noise evaluation on the full test split
    std::size_t eval_count = 0;
    nn::DecayStyle decay_style = nn::DecayStyle::SquaredNorm;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Two-hidden-layer ReLU MLP, hidden widths (d/2, d/4), optional single
/// batch-norm layer after the first hidden pre-activation. Divergence is
/// recorded as trainable=0, not an error.
std::vector<ResultRecord> run_mlp_bn(const MlpBnSpec& spec,
                                     const MnistContext& mnist,
                                     std::size_t threads = 1);

struct SpheresExpSpec {
    data::SpheresSpec data;
    std::vector<double> learning_rates{0.001, 0.01};
    std::vector<bool> batch_norm{false, true};
    std::size_t hidden_width = 1000;
    std::size_t batch = 50;
    int max_epochs = 1000;  // untrainable = no 100% train accuracy by then
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

std::vector<ResultRecord> run_spheres(const SpheresExpSpec& spec,
                                      std::size_t threads = 1);

struct MeanfieldCell {
    int depth = 0;
    std::size_t batch = 0;
    bool batch_norm = false;
};

struct MeanfieldSpec {
    std::vector<int> depths{10, 25, 40, 55};
    std::vector<std::size_t> batch_sizes{10, 100, 1000};
    std::vector<bool> batch_norm{false, true};
    // when non-empty, run exactly these cells instead of the cross product
    std::vector<MeanfieldCell> cells;
    std::size_t width = 384;
    double lr_per_batch = 1e-5;  // eta = lr_per_batch * B
    // "momentum disabled" in the protocol refers to the batch-norm running
    // statistics (cumulative averaging); the optimizer keeps the
    // conventional SGD momentum
    double momentum = 0.9;
    int epochs_bn = 10;
    int epochs_plain = 40;
    double noise_var = 0.25;
    double bim_epsilon = 0.1;
    double bim_step = 1e-3;
    int bim_iterations = 100;
    AttackUnits attack_units = AttackUnits::Pixelwise;
    std::size_t eval_count = 1000;  // noise/BIM evaluated on a test subset
    double bn_c = 1e-3;
    // when set, trained cells are checkpointed for the entropy sweep
    std::optional<std::filesystem::path> checkpoint_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

/// Depth x batch-size grid of constant-width ReLU nets, eta = 1e-5 B,
/// momentum disabled, gamma/beta default. Cells that diverge are recorded
/// with trainable=0.
std::vector<ResultRecord> run_meanfield_sweep(const MeanfieldSpec& spec,
                                              const MnistContext& mnist,
                                              std::size_t threads = 1);

struct MiSweepSpec {
    std::filesystem::path checkpoint_dir;
    int bits = 7;
};

/// Plug-in entropy of the 7-bit-quantized softmax over the full training
/// set for every checkpoint produced by run_meanfield_sweep.
std::vector<ResultRecord> run_mi_sweep(const MiSweepSpec& spec,
                                       const MnistContext& mnist);

struct TraceSpec {
    bool with_batch_norm = false;
    int epochs = 500;
    int checkpoint_every = 10;
    double learning_rate = 1e-2;
    double weight_decay = 1e-3;
    std::size_t batch = 128;
    std::uint64_t seed = 1;
    std::filesystem::path out_csv;  // (epoch, sample_id, x0, x1, label)
};

/// 784-392-196-2-49-10 MLP (batch-norm variant adds BN after the first two
/// hidden pre-activations); streams the two-unit layer coordinates of every
/// training sample to CSV at each checkpoint epoch.
std::vector<ResultRecord> run_activation_trace(const TraceSpec& spec,
                                               const MnistContext& mnist);

// ---------------------------------------------------------------------------
// Caching: experiments are pure functions of (spec, seeds), so results keyed
// by a config fingerprint can be reused across processes.
// ---------------------------------------------------------------------------

std::uint64_t fingerprint(const json& config);

/// Returns cached records for (name, config) if present, otherwise invokes
/// the runner and persists its records.
std::vector<ResultRecord> run_cached(
    const std::string& name, const json& config,
    const std::filesystem::path& cache_dir,
    const std::function<std::vector<ResultRecord>()>& runner);

/// Runs jobs on `threads` workers (in the caller's thread when threads <= 1).
void run_jobs(std::vector<std::function<void()>> jobs, std::size_t threads);

}  // namespace bnrl::expt
