#include "bnrl/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "bnrl/attacks.hpp"
#include "bnrl/checkpoint.hpp"
#include "bnrl/csv.hpp"
#include "bnrl/errors.hpp"
#include "bnrl/infotheory.hpp"

namespace bnrl::expt {

namespace {

// Salts for deriving independent random streams per job role.
constexpr std::uint64_t kInitSalt = 0x1111;
constexpr std::uint64_t kShuffleSalt = 0x2222;
constexpr std::uint64_t kNoiseSalt = 0x3333;
constexpr std::uint64_t kDataSalt = 0x4444;
constexpr std::uint64_t kEvalSalt = 0x5555;

std::uint64_t cond_tag(const json& condition) {
    return fingerprint(condition);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Batch pipeline: gather rows from a source dataset, optionally upscale and
// normalize. Keeps the d=112^2 variants out of memory; only one mini-batch
// lives at full resolution at a time.
// ---------------------------------------------------------------------------

struct SizedView {
    const data::Dataset* source = nullptr;
    std::size_t side = 0;  // target side; equal to source->side means no resize
    std::optional<data::NormStats> stats;  // applied after the resize

    std::size_t count() const { return source->count(); }
    std::size_t dim() const {
        return side && side != source->side ? side * side : source->dim();
    }
};

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    Tensor out(idx.size(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto src = x.row(idx[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

Tensor resize_tensor(Tensor x, std::size_t src_side, std::size_t dst_side) {
    if (dst_side == src_side || dst_side == 0) return x;
    data::Dataset tmp;
    tmp.inputs = std::move(x);
    tmp.labels.assign(tmp.inputs.rows(), 0);
    tmp.side = src_side;
    return data::resize_nearest(tmp, dst_side).inputs;
}

void normalize_inplace(Tensor& x, const data::NormStats& stats) {
    const double inv = 1.0 / stats.std;
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data()[i] = (x.data()[i] - stats.mean) * inv;
    }
}

Tensor view_batch(const SizedView& view, const std::vector<std::size_t>& idx) {
    Tensor x = gather_rows(view.source->inputs, idx);
    x = resize_tensor(std::move(x), view.source->side, view.side);
    if (view.stats) normalize_inplace(x, *view.stats);
    return x;
}

// Noise is added at the source (28x28) resolution in normalized units, then
// upscaled, matching the evaluation protocol for the resized variants.
Tensor view_batch_noisy(const SizedView& view,
                        const std::vector<std::size_t>& idx, double variance,
                        RandomSource& rng) {
    Tensor x = gather_rows(view.source->inputs, idx);
    if (view.stats) normalize_inplace(x, *view.stats);
    const double std = std::sqrt(variance);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data()[i] += rng.normal(0.0, std);
    }
    return resize_tensor(std::move(x), view.source->side, view.side);
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

// Seeded random subsample without replacement. The leading test examples are
// measurably harder than the full split (MNIST's test set mixes two writer
// pools), so a head slice would bias subset metrics; a random sample is an
// unbiased estimator of the full-split accuracy.
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t take,
                                        RandomSource& rng) {
    auto idx = iota_indices(total);
    take = std::min(take, total);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.next_u64() % (total - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
}

void shuffle_indices(std::vector<std::size_t>& idx, RandomSource& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = rng.next_u64() % i;
        std::swap(idx[i - 1], idx[j]);
    }
}

// ---------------------------------------------------------------------------
// Chunked evaluation
// ---------------------------------------------------------------------------

constexpr std::size_t kEvalChunk = 1000;

struct Metrics {
    double acc = 0.0;
    double loss = 0.0;
};

template <typename BatchFn>
Metrics eval_chunked(nn::Model& model, const SizedView& view,
                     const std::vector<std::size_t>& idx,
                     nn::LossKind loss_kind, BatchFn&& make_batch) {
    model.set_mode(nn::Mode::Eval);
    double correct = 0.0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += kEvalChunk) {
        const std::size_t end = std::min(start + kEvalChunk, idx.size());
        const std::vector<std::size_t> chunk(idx.begin() + start,
                                             idx.begin() + end);
        const std::vector<int> y = gather_labels(view.source->labels, chunk);
        Tensor x = make_batch(chunk);
        correct += nn::accuracy(model, x, y, loss_kind) * chunk.size();
        loss_sum += nn::evaluate_loss(model, x, y, loss_kind) * chunk.size();
    }
    const double n = static_cast<double>(idx.size());
    return {correct / n, loss_sum / n};
}

Metrics eval_clean(nn::Model& model, const SizedView& view,
                   const std::vector<std::size_t>& idx,
                   nn::LossKind loss_kind) {
    return eval_chunked(model, view, idx, loss_kind,
                        [&](const std::vector<std::size_t>& chunk) {
                            return view_batch(view, chunk);
                        });
}

Metrics eval_noise(nn::Model& model, const SizedView& view,
                   const std::vector<std::size_t>& idx, double variance,
                   RandomSource& rng, nn::LossKind loss_kind) {
    return eval_chunked(model, view, idx, loss_kind,
                        [&](const std::vector<std::size_t>& chunk) {
                            return view_batch_noisy(view, chunk, variance, rng);
                        });
}

Metrics eval_fgsm(nn::Model& model, const SizedView& view,
                  const std::vector<std::size_t>& idx, double epsilon,
                  nn::LossKind loss_kind) {
    return eval_chunked(model, view, idx, loss_kind,
                        [&](const std::vector<std::size_t>& chunk) {
                            const Tensor x = view_batch(view, chunk);
                            const std::vector<int> y =
                                gather_labels(view.source->labels, chunk);
                            return attack::fgsm(model, x, y, epsilon, loss_kind);
                        });
}

Metrics eval_pgd(nn::Model& model, const SizedView& view,
                 const std::vector<std::size_t>& idx,
                 const attack::AttackConfig& cfg, nn::LossKind loss_kind) {
    return eval_chunked(model, view, idx, loss_kind,
                        [&](const std::vector<std::size_t>& chunk) {
                            const Tensor x = view_batch(view, chunk);
                            const std::vector<int> y =
                                gather_labels(view.source->labels, chunk);
                            return attack::pgd(model, x, y, cfg, loss_kind);
                        });
}

// ---------------------------------------------------------------------------
// Shared training loop. Returns false on divergence (non-finite loss), which
// callers record as trainable=0. `after_epoch(epoch)` returning true stops
// training early (used for the spheres convergence criterion).
// ---------------------------------------------------------------------------

bool train_sgd(nn::Model& model, const SizedView& train, nn::LossKind loss_kind,
               const nn::SgdConfig& sgd, int epochs, std::size_t batch,
               RandomSource& rng,
               const std::function<bool(int)>& after_epoch = {}) {
    std::vector<std::size_t> order = iota_indices(train.count());
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        model.set_mode(nn::Mode::Train);
        shuffle_indices(order, rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(start + batch, order.size());
            if (end - start < 2) break;  // batch norm needs >= 2 samples
            const std::vector<std::size_t> chunk(order.begin() + start,
                                                 order.begin() + end);
            const Tensor x = view_batch(train, chunk);
            const std::vector<int> y =
                gather_labels(train.source->labels, chunk);
            const auto result = nn::forward_backward(model, x, y, loss_kind);
            if (!std::isfinite(result.loss)) return false;
            nn::sgd_step(model, sgd);
        }
        if (after_epoch && after_epoch(epoch)) break;
    }
    return true;
}

// Replaces the batch-norm running statistics accumulated during training with
// population statistics of the final weights, computed over the training set
// (the inference procedure of the original batch-norm algorithm). Stale
// mid-training moments otherwise depress eval-mode accuracy, most visibly for
// deep networks trained at small batch sizes.
void refresh_bn_stats(nn::Model& model, const SizedView& train) {
    std::vector<nn::RunningStatsMode> saved;
    for (auto& layer : model.layers) {
        if (auto* bn = std::get_if<nn::BatchNormLayer>(&layer)) {
            saved.push_back(bn->stats_mode);
            bn->stats_mode = nn::RunningStatsMode::CumulativeAverage;
            std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
            std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0);
            bn->batch_count = 0;
        }
    }
    if (saved.empty()) return;
    model.set_mode(nn::Mode::Train);
    const auto idx = iota_indices(train.count());
    for (std::size_t start = 0; start < idx.size(); start += kEvalChunk) {
        const std::size_t end = std::min(start + kEvalChunk, idx.size());
        if (end - start < 2) break;
        const std::vector<std::size_t> chunk(idx.begin() + start,
                                             idx.begin() + end);
        nn::forward(model, view_batch(train, chunk));
    }
    std::size_t k = 0;
    for (auto& layer : model.layers) {
        if (auto* bn = std::get_if<nn::BatchNormLayer>(&layer)) {
            bn->stats_mode = saved[k++];
        }
    }
    model.set_mode(nn::Mode::Eval);
}

void append_metric(std::vector<ResultRecord>& records,
                   const std::string& experiment, std::uint64_t seed,
                   const json& condition, const std::string& metric,
                   double value) {
    records.push_back({experiment, seed, condition, metric, value});
}

// Looks up a per-seed metric value; used for ratio rows vs a baseline run.
std::optional<double> find_metric(const std::vector<ResultRecord>& records,
                                  const json& condition, std::uint64_t seed,
                                  const std::string& metric) {
    for (const auto& r : records) {
        if (r.seed == seed && r.metric == metric && r.condition == condition) {
            return r.value;
        }
    }
    return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Summaries and CSV plumbing
// ---------------------------------------------------------------------------

SummaryStat summarize_values(const std::vector<double>& values) {
    if (values.empty()) throw ArgumentError("summarize_values: empty group");
    SummaryStat stat;
    stat.n = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    stat.mean = sum / static_cast<double>(stat.n);
    if (stat.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - stat.mean) * (v - stat.mean);
        const double sample_var = ss / static_cast<double>(stat.n - 1);
        stat.sem = std::sqrt(sample_var / static_cast<double>(stat.n));
    }
    return stat;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records,
                                  const std::vector<std::string>& group_keys) {
    // json object keys are stored sorted, so dump() is a canonical group id
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    std::map<std::pair<std::string, std::string>, json> group_json;
    for (const auto& r : records) {
        json g;
        g["experiment"] = r.experiment;
        if (group_keys.empty()) {
            for (const auto& [k, v] : r.condition.items()) g[k] = v;
        } else {
            for (const auto& key : group_keys) {
                if (r.condition.contains(key)) g[key] = r.condition.at(key);
            }
        }
        const std::pair<std::string, std::string> id{g.dump(), r.metric};
        groups[id].push_back(r.value);
        group_json.emplace(id, std::move(g));
    }
    std::vector<SummaryRow> rows;
    rows.reserve(groups.size());
    for (const auto& [id, values] : groups) {
        rows.push_back({group_json.at(id), id.second,
                        summarize_values(values)});
    }
    return rows;
}

void write_results_csv(const std::filesystem::path& path,
                       const std::vector<ResultRecord>& records) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(records.size());
    for (const auto& r : records) {
        rows.push_back({r.experiment, std::to_string(r.seed),
                        r.condition.dump(), r.metric, format_double(r.value)});
    }
    csv::write_rows(path, {"experiment", "seed", "condition_json", "metric",
                           "value"},
                    rows);
}

std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path) {
    const auto rows = csv::read_rows(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{
                            "experiment", "seed", "condition_json", "metric",
                            "value"}) {
        throw FormatError("read_results_csv: bad header in " + path.string());
    }
    std::vector<ResultRecord> records;
    records.reserve(rows.size() - 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != 5) {
            throw FormatError("read_results_csv: row " + std::to_string(i) +
                              " has " + std::to_string(row.size()) + " fields");
        }
        ResultRecord r;
        r.experiment = row[0];
        r.seed = std::stoull(row[1]);
        r.condition = json::parse(row[2]);
        r.metric = row[3];
        r.value = std::stod(row[4]);
        records.push_back(std::move(r));
    }
    return records;
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<SummaryRow>& rows) {
    std::vector<std::vector<std::string>> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        out.push_back({row.group.dump(), row.metric,
                       format_double(row.stat.mean), format_double(row.stat.sem),
                       std::to_string(row.stat.n)});
    }
    csv::write_rows(path, {"group_json", "metric", "mean", "sem", "n"}, out);
}

MnistContext load_mnist_context(const std::filesystem::path& data_dir) {
    MnistContext ctx;
    ctx.train_raw = data::load_mnist_idx(data_dir / "train-images-idx3-ubyte",
                                         data_dir / "train-labels-idx1-ubyte");
    ctx.test_raw = data::load_mnist_idx(data_dir / "t10k-images-idx3-ubyte",
                                        data_dir / "t10k-labels-idx1-ubyte");
    const auto normalized = data::normalize(ctx.train_raw);
    ctx.stats = normalized.norm_stats;
    return ctx;
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

void run_jobs(std::vector<std::function<void()>> jobs, std::size_t threads) {
    if (threads <= 1 || jobs.size() <= 1) {
        for (auto& job : jobs) job();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min(threads, jobs.size());
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Caching
// ---------------------------------------------------------------------------

std::uint64_t fingerprint(const json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::vector<ResultRecord> run_cached(
    const std::string& name, const json& config,
    const std::filesystem::path& cache_dir,
    const std::function<std::vector<ResultRecord>()>& runner) {
    char tag[32];
    std::snprintf(tag, sizeof(tag), "%016" PRIx64, fingerprint(config));
    const auto path = cache_dir / (name + "-" + tag + ".csv");
    if (std::filesystem::exists(path)) return read_results_csv(path);
    auto records = runner();
    std::filesystem::create_directories(cache_dir);
    const auto tmp = path.string() + ".tmp";
    write_results_csv(tmp, records);
    std::filesystem::rename(tmp, path);
    return records;
}

// ---------------------------------------------------------------------------
// Linear model vs input dimension
// ---------------------------------------------------------------------------

double predicted_damage(std::size_t d, std::size_t d0) {
    if (d < d0) throw ArgumentError("predicted_damage: d must be >= d0");
    if (d0 == 0) throw ArgumentError("predicted_damage: d0 must be positive");
    return std::sqrt(static_cast<double>(d) / static_cast<double>(d0));
}

std::vector<ResultRecord> run_input_dim(const InputDimSpec& spec,
                                        const MnistContext& mnist,
                                        std::size_t threads) {
    if (spec.seeds.empty()) throw ConfigError("input_dim: seeds empty");
    struct Cond {
        std::size_t width;
        double lambda;
    };
    std::vector<Cond> conds;
    for (std::size_t w : spec.widths) conds.push_back({w, 0.0});
    for (std::size_t w : spec.widths) {
        const auto it = spec.decay_rows.find(w);
        if (it != spec.decay_rows.end() && it->second != 0.0) {
            conds.push_back({w, it->second});
        }
    }

    const std::size_t n_jobs = conds.size() * spec.seeds.size();
    std::vector<std::vector<ResultRecord>> slots(n_jobs);
    std::vector<std::function<void()>> jobs;
    jobs.reserve(n_jobs);
    for (std::size_t ci = 0; ci < conds.size(); ++ci) {
        for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
            const Cond cond = conds[ci];
            const std::uint64_t seed = spec.seeds[si];
            auto* out = &slots[ci * spec.seeds.size() + si];
            jobs.emplace_back([&, cond, seed, out] {
                json cjson;
                cjson["width"] = cond.width;
                cjson["lambda"] = cond.lambda;
                const std::uint64_t tag = cond_tag(cjson);

                const SizedView train{&mnist.train_raw, cond.width,
                                      mnist.stats};
                const SizedView test{&mnist.test_raw, cond.width, mnist.stats};

                nn::Model model;
                model.add_affine(cond.width * cond.width, 10);
                RandomSource init_rng(
                    derive_seed(seed, tag ^ kInitSalt));
                nn::he_init(init_rng, model);

                nn::SgdConfig sgd;
                sgd.learning_rate = spec.learning_rate;
                sgd.momentum = spec.momentum;
                sgd.weight_decay = cond.lambda;
                sgd.decay_style = spec.decay_style;

                RandomSource train_rng(derive_seed(seed, tag ^ kShuffleSalt));
                const bool trainable =
                    train_sgd(model, train, nn::LossKind::SoftmaxCrossEntropy,
                              sgd, spec.epochs, spec.batch, train_rng);
                append_metric(*out, "input_dim", seed, cjson, "trainable",
                              trainable ? 1.0 : 0.0);
                if (!trainable) return;

                const auto idx = iota_indices(test.count());
                const auto clean =
                    eval_clean(model, test, idx,
                               nn::LossKind::SoftmaxCrossEntropy);
                append_metric(*out, "input_dim", seed, cjson, "clean_acc",
                              clean.acc);
                append_metric(*out, "input_dim", seed, cjson, "clean_loss",
                              clean.loss);
                for (double eps : spec.fgsm_epsilons) {
                    json acond = cjson;
                    acond["epsilon"] = eps;
                    const auto adv =
                        eval_fgsm(model, test, idx, eps,
                                  nn::LossKind::SoftmaxCrossEntropy);
                    append_metric(*out, "input_dim", seed, acond, "attack_acc",
                                  adv.acc);
                    append_metric(*out, "input_dim", seed, acond, "attack_loss",
                                  adv.loss);
                }
            });
        }
    }
    run_jobs(std::move(jobs), threads);

    std::vector<ResultRecord> records;
    for (auto& slot : slots) {
        for (auto& r : slot) records.push_back(std::move(r));
    }

    // Ratio rows vs the same-seed (width 28, lambda 0) baseline, plus the
    // predicted sqrt(d/d0) damage per width.
    const std::size_t base_width = spec.widths.empty() ? 28 : spec.widths[0];
    json base;
    base["width"] = base_width;
    base["lambda"] = 0.0;
    std::vector<ResultRecord> derived;
    for (const Cond& cond : conds) {
        json cjson;
        cjson["width"] = cond.width;
        cjson["lambda"] = cond.lambda;
        for (double eps : spec.fgsm_epsilons) {
            json acond = cjson;
            acond["epsilon"] = eps;
            json abase = base;
            abase["epsilon"] = eps;
            for (std::uint64_t seed : spec.seeds) {
                const auto acc = find_metric(records, acond, seed, "attack_acc");
                const auto base_acc =
                    find_metric(records, abase, seed, "attack_acc");
                if (acc && base_acc && *base_acc > 0.0) {
                    append_metric(derived, "input_dim", seed, acond,
                                  "rel_attack_acc", *acc / *base_acc);
                }
                const auto loss =
                    find_metric(records, acond, seed, "attack_loss");
                const auto base_loss =
                    find_metric(records, abase, seed, "attack_loss");
                if (loss && base_loss && *base_loss > 0.0) {
                    append_metric(derived, "input_dim", seed, acond,
                                  "rel_attack_loss", *loss / *base_loss);
                }
            }
        }
    }
    for (std::size_t w : spec.widths) {
        json cjson;
        cjson["width"] = w;
        append_metric(derived, "input_dim", 0, cjson, "predicted_damage",
                      predicted_damage(w * w, base_width * base_width));
    }
    for (auto& r : derived) records.push_back(std::move(r));
    return records;
}

// ---------------------------------------------------------------------------
// MLP with/without batch norm
// ---------------------------------------------------------------------------

std::vector<ResultRecord> run_mlp_bn(const MlpBnSpec& spec,
                                     const MnistContext& mnist,
                                     std::size_t threads) {
    if (spec.seeds.empty()) throw ConfigError("mlp_bn: seeds empty");
    struct Cond {
        std::size_t width;
        bool bn;
        double lambda;
    };
    std::vector<Cond> conds;
    for (std::size_t w : spec.widths) {
        const auto it = spec.lambda_per_width.find(w);
        const double lambda =
            it == spec.lambda_per_width.end() ? 0.0 : it->second;
        for (bool bn : spec.batch_norm) conds.push_back({w, bn, lambda});
    }

    auto cond_json = [](const Cond& c) {
        json j;
        j["width"] = c.width;
        j["batch_norm"] = c.bn;
        j["lambda"] = c.lambda;
        return j;
    };

    const std::size_t n_jobs = conds.size() * spec.seeds.size();
    std::vector<std::vector<ResultRecord>> slots(n_jobs);
    std::vector<std::function<void()>> jobs;
    jobs.reserve(n_jobs);
    for (std::size_t ci = 0; ci < conds.size(); ++ci) {
        for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
            const Cond cond = conds[ci];
            const std::uint64_t seed = spec.seeds[si];
            auto* out = &slots[ci * spec.seeds.size() + si];
            jobs.emplace_back([&, cond, seed, out] {
                const json cjson = cond_json(cond);
                const std::uint64_t tag = cond_tag(cjson);

                const std::size_t d = cond.width * cond.width;
                const std::size_t h1 = d / 2;
                const std::size_t h2 = spec.constant_width ? h1 : d / 4;
                nn::Model model;
                model.add_affine(d, h1);
                if (cond.bn) model.add_batchnorm(h1);
                model.add_relu();
                model.add_affine(h1, h2);
                model.add_relu();
                model.add_affine(h2, 10);
                RandomSource init_rng(derive_seed(seed, tag ^ kInitSalt));
                nn::he_init(init_rng, model);

                const SizedView train{&mnist.train_raw, cond.width,
                                      mnist.stats};
                const SizedView test{&mnist.test_raw, cond.width, mnist.stats};

                nn::SgdConfig sgd;
                sgd.learning_rate = spec.learning_rate;
                sgd.momentum = spec.momentum;
                sgd.weight_decay = cond.lambda;
                sgd.decay_style = spec.decay_style;

                RandomSource train_rng(derive_seed(seed, tag ^ kShuffleSalt));
                const bool trainable =
                    train_sgd(model, train, nn::LossKind::SoftmaxCrossEntropy,
                              sgd, spec.epochs, spec.batch, train_rng);
                append_metric(*out, "mlp_bn", seed, cjson, "trainable",
                              trainable ? 1.0 : 0.0);
                if (!trainable) return;
                refresh_bn_stats(model, train);

                const auto full_idx = iota_indices(test.count());
                RandomSource eval_rng(derive_seed(seed, tag ^ kEvalSalt));
                const auto attack_idx =
                    spec.eval_count == 0
                        ? full_idx
                        : sample_indices(test.count(), spec.eval_count,
                                         eval_rng);

                const auto loss_kind = nn::LossKind::SoftmaxCrossEntropy;
                const auto clean = eval_clean(model, test, full_idx, loss_kind);
                append_metric(*out, "mlp_bn", seed, cjson, "clean_acc",
                              clean.acc);
                append_metric(*out, "mlp_bn", seed, cjson, "clean_loss",
                              clean.loss);

                RandomSource noise_rng(derive_seed(seed, tag ^ kNoiseSalt));
                const auto noisy = eval_noise(model, test, full_idx,
                                              spec.noise_var, noise_rng,
                                              loss_kind);
                append_metric(*out, "mlp_bn", seed, cjson, "noise_acc",
                              noisy.acc);
                append_metric(*out, "mlp_bn", seed, cjson, "noise_loss",
                              noisy.loss);

                const auto bim = attack::bim_config(
                    spec.bim_epsilon, spec.bim_step, spec.bim_iterations);
                const auto adv =
                    eval_pgd(model, test, attack_idx, bim, loss_kind);
                append_metric(*out, "mlp_bn", seed, cjson, "attack_acc",
                              adv.acc);
                append_metric(*out, "mlp_bn", seed, cjson, "attack_loss",
                              adv.loss);
            });
        }
    }
    run_jobs(std::move(jobs), threads);

    std::vector<ResultRecord> records;
    for (auto& slot : slots) {
        for (auto& r : slot) records.push_back(std::move(r));
    }

    // Ratio rows vs the same-seed (width 28, no BN) baseline.
    const std::size_t base_width = spec.widths.empty() ? 28 : spec.widths[0];
    json base;
    base["width"] = base_width;
    base["batch_norm"] = false;
    base["lambda"] = 0.0;
    {
        const auto it = spec.lambda_per_width.find(base_width);
        if (it != spec.lambda_per_width.end()) base["lambda"] = it->second;
    }
    std::vector<ResultRecord> derived;
    for (const Cond& cond : conds) {
        const json cjson = cond_json(cond);
        if (cjson == base) continue;
        for (const char* metric : {"clean_acc", "noise_acc", "attack_acc"}) {
            for (std::uint64_t seed : spec.seeds) {
                const auto v = find_metric(records, cjson, seed, metric);
                const auto b = find_metric(records, base, seed, metric);
                if (v && b && *b > 0.0) {
                    append_metric(derived, "mlp_bn", seed, cjson,
                                  std::string("rel_") + metric, *v / *b);
                }
            }
        }
    }
    for (auto& r : derived) records.push_back(std::move(r));
    return records;
}

// ---------------------------------------------------------------------------
// Adversarial spheres
// ---------------------------------------------------------------------------

std::vector<ResultRecord> run_spheres(const SpheresExpSpec& spec,
                                      std::size_t threads) {
    if (spec.seeds.empty()) throw ConfigError("spheres: seeds empty");
    struct Cond {
        double lr;
        bool bn;
    };
    std::vector<Cond> conds;
    for (double lr : spec.learning_rates) {
        for (bool bn : spec.batch_norm) conds.push_back({lr, bn});
    }

    const std::size_t n_jobs = conds.size() * spec.seeds.size();
    std::vector<std::vector<ResultRecord>> slots(n_jobs);
    std::vector<std::function<void()>> jobs;
    jobs.reserve(n_jobs);
    for (std::size_t ci = 0; ci < conds.size(); ++ci) {
        for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
            const Cond cond = conds[ci];
            const std::uint64_t seed = spec.seeds[si];
            auto* out = &slots[ci * spec.seeds.size() + si];
            jobs.emplace_back([&, cond, seed, out] {
                json cjson;
                cjson["learning_rate"] = cond.lr;
                cjson["batch_norm"] = cond.bn;
                const std::uint64_t tag = cond_tag(cjson);

                RandomSource data_rng(derive_seed(seed, kDataSalt));
                const data::Dataset train_set = data::spheres_sample(
                    spec.data, data_rng, data::Split::Train);
                const data::Dataset test_set = data::spheres_sample(
                    spec.data, data_rng, data::Split::Test, true);

                nn::Model model;
                model.add_affine(spec.data.ambient_dim, spec.hidden_width);
                if (cond.bn) model.add_batchnorm(spec.hidden_width);
                model.add_relu();
                model.add_affine(spec.hidden_width, spec.hidden_width);
                if (cond.bn) model.add_batchnorm(spec.hidden_width);
                model.add_relu();
                model.add_affine(spec.hidden_width, 1);
                RandomSource init_rng(derive_seed(seed, tag ^ kInitSalt));
                nn::he_init(init_rng, model);

                nn::SgdConfig sgd;
                sgd.learning_rate = cond.lr;

                const SizedView train{&train_set, train_set.side, std::nullopt};
                const SizedView test{&test_set, test_set.side, std::nullopt};
                const auto train_idx = iota_indices(train_set.count());
                const auto loss_kind = nn::LossKind::Logistic;

                bool converged = false;
                int epochs_run = 0;
                RandomSource train_rng(derive_seed(seed, tag ^ kShuffleSalt));
                const bool finite = train_sgd(
                    model, train, loss_kind, sgd, spec.max_epochs, spec.batch,
                    train_rng, [&](int epoch) {
                        epochs_run = epoch;
                        const auto m =
                            eval_clean(model, train, train_idx, loss_kind);
                        append_metric(*out, "spheres", seed,
                                      [&] {
                                          json e = cjson;
                                          e["epoch"] = epoch;
                                          return e;
                                      }(),
                                      "train_acc", m.acc);
                        if (m.acc >= 1.0) converged = true;
                        return converged;
                    });

                append_metric(*out, "spheres", seed, cjson, "trainable",
                              finite && converged ? 1.0 : 0.0);
                append_metric(*out, "spheres", seed, cjson, "epochs_to_fit",
                              static_cast<double>(epochs_run));
                if (finite && converged) {
                    refresh_bn_stats(model, train);
                    const auto m = eval_clean(model, test,
                                              iota_indices(test_set.count()),
                                              loss_kind);
                    append_metric(*out, "spheres", seed, cjson, "test_acc",
                                  m.acc);
                }
            });
        }
    }
    run_jobs(std::move(jobs), threads);

    std::vector<ResultRecord> records;
    for (auto& slot : slots) {
        for (auto& r : slot) records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Mean-field depth x batch-size sweep
// ---------------------------------------------------------------------------

std::vector<ResultRecord> run_meanfield_sweep(const MeanfieldSpec& spec,
                                              const MnistContext& mnist,
                                              std::size_t threads) {
    if (spec.seeds.empty()) throw ConfigError("meanfield: seeds empty");
    std::vector<MeanfieldCell> cells = spec.cells;
    if (cells.empty()) {
        for (int depth : spec.depths) {
            for (std::size_t batch : spec.batch_sizes) {
                for (bool bn : spec.batch_norm) {
                    cells.push_back({depth, batch, bn});
                }
            }
        }
    }

    // One normalized copy at 28x28 shared read-only by every job.
    const data::Dataset train_norm = data::normalize(mnist.train_raw);
    const data::Dataset test_norm =
        data::normalize(mnist.test_raw, mnist.stats);

    const std::size_t n_jobs = cells.size() * spec.seeds.size();
    std::vector<std::vector<ResultRecord>> slots(n_jobs);
    std::vector<std::function<void()>> jobs;
    jobs.reserve(n_jobs);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
            const MeanfieldCell cell = cells[ci];
            const std::uint64_t seed = spec.seeds[si];
            auto* out = &slots[ci * spec.seeds.size() + si];
            jobs.emplace_back([&, cell, seed, out] {
                json cjson;
                cjson["depth"] = cell.depth;
                cjson["batch"] = cell.batch;
                cjson["batch_norm"] = cell.batch_norm;
                const std::uint64_t tag = cond_tag(cjson);

                nn::Model model;
                std::size_t prev = train_norm.dim();
                for (int l = 0; l < cell.depth; ++l) {
                    model.add_affine(prev, spec.width);
                    if (cell.batch_norm) {
                        model.add_batchnorm(spec.width, spec.bn_c);
                    }
                    model.add_relu();
                    prev = spec.width;
                }
                model.add_affine(prev, 10);
                RandomSource init_rng(derive_seed(seed, tag ^ kInitSalt));
                nn::he_init(init_rng, model);

                nn::SgdConfig sgd;
                sgd.learning_rate =
                    spec.lr_per_batch * static_cast<double>(cell.batch);
                sgd.momentum = spec.momentum;
                const int epochs =
                    cell.batch_norm ? spec.epochs_bn : spec.epochs_plain;

                const SizedView train{&train_norm, train_norm.side,
                                      std::nullopt};
                const SizedView test{&test_norm, test_norm.side, std::nullopt};

                RandomSource train_rng(derive_seed(seed, tag ^ kShuffleSalt));
                const bool trainable = train_sgd(
                    model, train, nn::LossKind::SoftmaxCrossEntropy, sgd,
                    epochs, cell.batch, train_rng);
                append_metric(*out, "meanfield", seed, cjson, "trainable",
                              trainable ? 1.0 : 0.0);
                if (!trainable) return;
                refresh_bn_stats(model, train);

                const auto loss_kind = nn::LossKind::SoftmaxCrossEntropy;
                const auto full_idx = iota_indices(test.count());
                RandomSource eval_rng(derive_seed(seed, tag ^ kEvalSalt));
                const auto sub_idx =
                    spec.eval_count == 0
                        ? full_idx
                        : sample_indices(test.count(), spec.eval_count,
                                         eval_rng);

                const auto clean = eval_clean(model, test, full_idx, loss_kind);
                append_metric(*out, "meanfield", seed, cjson, "clean_acc",
                              clean.acc);
                RandomSource noise_rng(derive_seed(seed, tag ^ kNoiseSalt));
                const auto noisy = eval_noise(model, test, sub_idx,
                                              spec.noise_var, noise_rng,
                                              loss_kind);
                append_metric(*out, "meanfield", seed, cjson, "noise_acc",
                              noisy.acc);
                const auto bim = attack::bim_config(
                    spec.bim_epsilon, spec.bim_step, spec.bim_iterations);
                const auto adv = eval_pgd(model, test, sub_idx, bim, loss_kind);
                append_metric(*out, "meanfield", seed, cjson, "attack_acc",
                              adv.acc);

                if (spec.checkpoint_dir) {
                    std::filesystem::create_directories(*spec.checkpoint_dir);
                    char name[128];
                    std::snprintf(name, sizeof(name),
                                  "meanfield-L%d-B%zu-bn%d-seed%" PRIu64
                                  ".bnrl",
                                  cell.depth, cell.batch,
                                  cell.batch_norm ? 1 : 0, seed);
                    nn::save_model(*spec.checkpoint_dir / name, model);
                }
            });
        }
    }
    run_jobs(std::move(jobs), threads);

    std::vector<ResultRecord> records;
    for (auto& slot : slots) {
        for (auto& r : slot) records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Entropy of quantized softmax outputs over the training set
// ---------------------------------------------------------------------------

std::vector<ResultRecord> run_mi_sweep(const MiSweepSpec& spec,
                                       const MnistContext& mnist) {
    if (!std::filesystem::is_directory(spec.checkpoint_dir)) {
        throw StateError("mi_sweep: checkpoint directory " +
                         spec.checkpoint_dir.string() + " does not exist");
    }
    std::vector<std::filesystem::path> paths;
    for (const auto& entry :
         std::filesystem::directory_iterator(spec.checkpoint_dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("meanfield-", 0) == 0 &&
            entry.path().extension() == ".bnrl") {
            paths.push_back(entry.path());
        }
    }
    if (paths.empty()) {
        throw StateError("mi_sweep: no meanfield checkpoints in " +
                         spec.checkpoint_dir.string());
    }
    std::sort(paths.begin(), paths.end());

    const data::Dataset train_norm = data::normalize(mnist.train_raw);

    std::vector<ResultRecord> records;
    for (const auto& path : paths) {
        int depth = 0, bn = 0;
        std::size_t batch = 0;
        std::uint64_t seed = 0;
        if (std::sscanf(path.filename().string().c_str(),
                        "meanfield-L%d-B%zu-bn%d-seed%" SCNu64 ".bnrl", &depth,
                        &batch, &bn, &seed) != 4) {
            throw FormatError("mi_sweep: unparseable checkpoint name " +
                              path.filename().string());
        }
        nn::Model model = nn::load_model(path);
        model.set_mode(nn::Mode::Eval);

        info::QuantizedDistribution dist;
        dist.bits = spec.bits;
        dist.dims = 10;
        std::vector<std::size_t> label_counts(10, 0);
        const std::size_t n = train_norm.count();
        for (std::size_t start = 0; start < n; start += kEvalChunk) {
            const std::size_t end = std::min(start + kEvalChunk, n);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            Tensor x = gather_rows(train_norm.inputs, idx);
            const Tensor probs = nn::softmax_outputs(model, x);
            const auto chunk_dist =
                info::quantize_activations(probs, spec.bits);
            for (const auto& [symbol, count] : chunk_dist.symbol_counts) {
                dist.symbol_counts[symbol] += count;
            }
            dist.total += chunk_dist.total;
            const auto preds =
                nn::predict(model, x, nn::LossKind::SoftmaxCrossEntropy);
            for (int p : preds) ++label_counts[static_cast<std::size_t>(p)];
        }

        const double entropy = info::plugin_entropy(dist);
        const double ci =
            info::entropy_confidence(dist.total, spec.bits, dist.dims);
        double label_entropy = 0.0;
        for (std::size_t c : label_counts) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / static_cast<double>(n);
            label_entropy -= p * std::log2(p);
        }

        json cjson;
        cjson["depth"] = depth;
        cjson["batch"] = batch;
        cjson["batch_norm"] = bn != 0;
        cjson["bits"] = spec.bits;
        append_metric(records, "mi_sweep", seed, cjson, "entropy_bits",
                      entropy);
        append_metric(records, "mi_sweep", seed, cjson, "entropy_ci", ci);
        append_metric(records, "mi_sweep", seed, cjson, "label_entropy_bits",
                      label_entropy);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Two-unit bottleneck activation trace
// ---------------------------------------------------------------------------

std::vector<ResultRecord> run_activation_trace(const TraceSpec& spec,
                                               const MnistContext& mnist) {
    if (spec.out_csv.empty()) {
        throw ConfigError("activation_trace: out_csv path required");
    }
    const data::Dataset train_norm = data::normalize(mnist.train_raw);
    const data::Dataset test_norm =
        data::normalize(mnist.test_raw, mnist.stats);

    nn::Model model;
    model.add_affine(784, 392);
    if (spec.with_batch_norm) model.add_batchnorm(392);
    model.add_relu();
    model.add_affine(392, 196);
    if (spec.with_batch_norm) model.add_batchnorm(196);
    model.add_relu();
    model.add_affine(196, 2);
    model.add_relu();
    model.add_affine(2, 49);
    model.add_relu();
    model.add_affine(49, 10);

    json cjson;
    cjson["batch_norm"] = spec.with_batch_norm;
    cjson["lambda"] = spec.weight_decay;
    const std::uint64_t tag = cond_tag(cjson);
    RandomSource init_rng(derive_seed(spec.seed, tag ^ kInitSalt));
    nn::he_init(init_rng, model);

    // Prefix up to and including the affine layer with two outputs; its
    // output is the traced 2-D coordinate.
    std::size_t prefix_len = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (const auto* aff = std::get_if<nn::AffineLayer>(&model.layers[i]);
            aff && aff->out == 2) {
            prefix_len = i + 1;
            break;
        }
    }

    std::ofstream trace(spec.out_csv);
    if (!trace) {
        throw FormatError("activation_trace: cannot write " +
                          spec.out_csv.string());
    }
    trace << "epoch,sample_id,x0,x1,label\n";

    auto emit_checkpoint = [&](int epoch) {
        nn::Model prefix;
        prefix.layers.assign(model.layers.begin(),
                             model.layers.begin() + prefix_len);
        prefix.set_mode(nn::Mode::Eval);
        const std::size_t n = train_norm.count();
        for (std::size_t start = 0; start < n; start += kEvalChunk) {
            const std::size_t end = std::min(start + kEvalChunk, n);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            const Tensor coords =
                nn::forward(prefix, gather_rows(train_norm.inputs, idx));
            for (std::size_t i = 0; i < idx.size(); ++i) {
                trace << epoch << ',' << idx[i] << ','
                      << format_double(coords.at(i, 0)) << ','
                      << format_double(coords.at(i, 1)) << ','
                      << train_norm.labels[idx[i]] << '\n';
            }
        }
    };

    nn::SgdConfig sgd;
    sgd.learning_rate = spec.learning_rate;
    sgd.weight_decay = spec.weight_decay;

    const SizedView train{&train_norm, train_norm.side, std::nullopt};
    emit_checkpoint(0);
    int checkpoints = 1;
    RandomSource train_rng(derive_seed(spec.seed, tag ^ kShuffleSalt));
    const bool trainable = train_sgd(
        model, train, nn::LossKind::SoftmaxCrossEntropy, sgd, spec.epochs,
        spec.batch, train_rng, [&](int epoch) {
            if (epoch % spec.checkpoint_every == 0 || epoch == spec.epochs) {
                emit_checkpoint(epoch);
                ++checkpoints;
            }
            return false;
        });

    std::vector<ResultRecord> records;
    append_metric(records, "activation_trace", spec.seed, cjson, "trainable",
                  trainable ? 1.0 : 0.0);
    append_metric(records, "activation_trace", spec.seed, cjson, "checkpoints",
                  static_cast<double>(checkpoints));
    if (trainable) {
        const SizedView test{&test_norm, test_norm.side, std::nullopt};
        const auto m = eval_clean(model, test, iota_indices(test_norm.count()),
                                  nn::LossKind::SoftmaxCrossEntropy);
        append_metric(records, "activation_trace", spec.seed, cjson,
                      "test_acc", m.acc);
    }
    return records;
}

}  // namespace bnrl::expt
