// bnrl: experiment driver for the batch-norm robustness laboratory.
//
// Subcommands: fetch | train | attack | input-dim | mlp-bn | spheres |
// meanfield | mi | trace | report. Experiment parameters come from a JSON
// config file (--config); unknown keys are rejected. Every experiment run
// writes results.csv, summary.csv, and manifest.json under --out.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bnrl/attacks.hpp"
#include "bnrl/checkpoint.hpp"
#include "bnrl/data.hpp"
#include "bnrl/errors.hpp"
#include "bnrl/experiments.hpp"
#include "bnrl/fetch.hpp"

namespace {

using bnrl::ConfigError;
using nlohmann::json;
namespace expt = bnrl::expt;

// Consumes keys from a JSON object as they are read; anything left over at
// the end is an unknown key and rejected by name.
class ConfigReader {
public:
    explicit ConfigReader(json obj) : obj_(std::move(obj)) {
        if (!obj_.is_object()) throw ConfigError("config must be a JSON object");
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        const auto it = obj_.find(key);
        if (it == obj_.end()) return fallback;
        T value;
        try {
            value = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key \"" + key + "\" has the wrong type");
        }
        obj_.erase(it);
        return value;
    }

    std::optional<json> take_raw(const std::string& key) {
        const auto it = obj_.find(key);
        if (it == obj_.end()) return std::nullopt;
        json value = *it;
        obj_.erase(it);
        return value;
    }

    void expect_kind(const std::string& kind) {
        const auto found = get<std::string>("kind", kind);
        if (found != kind) {
            throw ConfigError("config key \"kind\" is \"" + found +
                              "\" but the subcommand expects \"" + kind + "\"");
        }
    }

    void done() const {
        if (!obj_.empty()) {
            throw ConfigError("unknown config key \"" +
                              obj_.items().begin().key() + "\"");
        }
    }

private:
    json obj_;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return obj;
}

// "1,2,3" or "1..5" (inclusive range).
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    const auto range_pos = text.find("..");
    if (range_pos != std::string::npos) {
        const std::uint64_t lo = std::stoull(text.substr(0, range_pos));
        const std::uint64_t hi = std::stoull(text.substr(range_pos + 2));
        if (hi < lo) throw ConfigError("seed range is empty: " + text);
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto token = text.substr(
            start, comma == std::string::npos ? std::string::npos
                                              : comma - start);
        if (!token.empty()) seeds.push_back(std::stoull(token));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw ConfigError("empty seed list: " + text);
    return seeds;
}

std::map<std::size_t, double> parse_width_map(const json& obj,
                                              const std::string& key) {
    if (!obj.is_object()) {
        throw ConfigError("config key \"" + key +
                          "\" must map width strings to numbers");
    }
    std::map<std::size_t, double> out;
    for (const auto& [k, v] : obj.items()) {
        if (!v.is_number()) {
            throw ConfigError("config key \"" + key + "\" entry \"" + k +
                              "\" must be a number");
        }
        out[std::stoull(k)] = v.get<double>();
    }
    return out;
}

struct GlobalOptions {
    std::string config_path;
    std::string data_dir;
    std::string out_dir = "out";
    std::size_t threads = 1;
    std::string seeds_flag;
};

std::filesystem::path resolve_data_dir(const GlobalOptions& opts) {
    if (!opts.data_dir.empty()) return opts.data_dir;
    if (const char* env = std::getenv("BNRL_DATA_DIR")) return env;
    return "data";
}

void apply_seed_override(const GlobalOptions& opts,
                         std::vector<std::uint64_t>& seeds) {
    if (!opts.seeds_flag.empty()) seeds = parse_seed_list(opts.seeds_flag);
    if (seeds.empty()) throw ConfigError("seed list must be non-empty");
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("seed list must be distinct");
    }
}

void write_outputs(const GlobalOptions& opts, const std::string& command,
                   const json& config_echo,
                   const std::vector<std::uint64_t>& seeds,
                   const std::vector<expt::ResultRecord>& records,
                   double wall_seconds) {
    const std::filesystem::path out = opts.out_dir;
    std::filesystem::create_directories(out);
    expt::write_results_csv(out / "results.csv", records);
    expt::write_summary_csv(out / "summary.csv", expt::summarize(records, {}));
    json manifest;
    manifest["command"] = command;
    manifest["config"] = config_echo;
    manifest["seeds"] = seeds;
    manifest["wall_seconds"] = wall_seconds;
    manifest["artifact_version"] = "0.1.0";
    std::ofstream mf(out / "manifest.json");
    mf << manifest.dump(2) << '\n';
    std::cout << records.size() << " records -> "
              << (out / "results.csv").string() << '\n';
}

template <typename Runner>
int run_experiment(const GlobalOptions& opts, const std::string& command,
                   const json& config_echo,
                   const std::vector<std::uint64_t>& seeds, Runner&& runner) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto records = runner();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    write_outputs(opts, command, config_echo, seeds, records, wall);
    return 0;
}

// ---------------------------------------------------------------------------
// Spec parsing per subcommand
// ---------------------------------------------------------------------------

expt::InputDimSpec parse_input_dim(ConfigReader& cfg) {
    expt::InputDimSpec spec;
    cfg.expect_kind("input_dim");
    spec.widths = cfg.get("widths", spec.widths);
    if (const auto rows = cfg.take_raw("decay_rows")) {
        spec.decay_rows = parse_width_map(*rows, "decay_rows");
    }
    spec.epochs = cfg.get("epochs", spec.epochs);
    spec.learning_rate = cfg.get("learning_rate", spec.learning_rate);
    spec.momentum = cfg.get("momentum", spec.momentum);
    spec.batch = cfg.get("batch", spec.batch);
    spec.fgsm_epsilons = cfg.get("fgsm_epsilons", spec.fgsm_epsilons);
    if (cfg.get<std::string>("decay_style", "squared") == "unsquared") {
        spec.decay_style = bnrl::nn::DecayStyle::UnsquaredNorm;
    }
    spec.seeds = cfg.get("seeds", spec.seeds);
    cfg.done();
    return spec;
}

expt::MlpBnSpec parse_mlp_bn(ConfigReader& cfg) {
    expt::MlpBnSpec spec;
    cfg.expect_kind("mlp_bn");
    spec.widths = cfg.get("widths", spec.widths);
    spec.batch_norm = cfg.get("batch_norm", spec.batch_norm);
    if (const auto rows = cfg.take_raw("lambda_per_width")) {
        spec.lambda_per_width = parse_width_map(*rows, "lambda_per_width");
    }
    spec.constant_width = cfg.get("constant_width", spec.constant_width);
    spec.epochs = cfg.get("epochs", spec.epochs);
    spec.learning_rate = cfg.get("learning_rate", spec.learning_rate);
    spec.momentum = cfg.get("momentum", spec.momentum);
    spec.batch = cfg.get("batch", spec.batch);
    spec.noise_var = cfg.get("noise_var", spec.noise_var);
    spec.bim_epsilon = cfg.get("bim_epsilon", spec.bim_epsilon);
    spec.bim_step = cfg.get("bim_step", spec.bim_step);
    spec.bim_iterations = cfg.get("bim_iterations", spec.bim_iterations);
    spec.eval_count = cfg.get("eval_count", spec.eval_count);
    spec.seeds = cfg.get("seeds", spec.seeds);
    cfg.done();
    return spec;
}

expt::SpheresExpSpec parse_spheres(ConfigReader& cfg) {
    expt::SpheresExpSpec spec;
    cfg.expect_kind("spheres");
    spec.learning_rates = cfg.get("learning_rates", spec.learning_rates);
    spec.batch_norm = cfg.get("batch_norm", spec.batch_norm);
    spec.hidden_width = cfg.get("hidden_width", spec.hidden_width);
    spec.batch = cfg.get("batch", spec.batch);
    spec.max_epochs = cfg.get("max_epochs", spec.max_epochs);
    spec.data.inner_radius = cfg.get("inner_radius", spec.data.inner_radius);
    spec.data.outer_radius = cfg.get("outer_radius", spec.data.outer_radius);
    spec.data.ambient_dim = cfg.get("ambient_dim", spec.data.ambient_dim);
    spec.data.train_count = cfg.get("train_count", spec.data.train_count);
    spec.data.test_count_per_class =
        cfg.get("test_count_per_class", spec.data.test_count_per_class);
    spec.data.test_noise_var =
        cfg.get("test_noise_var", spec.data.test_noise_var);
    spec.seeds = cfg.get("seeds", spec.seeds);
    cfg.done();
    return spec;
}

expt::MeanfieldSpec parse_meanfield(ConfigReader& cfg, bool full_grid) {
    expt::MeanfieldSpec spec;
    cfg.expect_kind("meanfield");
    spec.depths = cfg.get("depths", spec.depths);
    spec.batch_sizes = cfg.get("batch_sizes", spec.batch_sizes);
    spec.batch_norm = cfg.get("batch_norm", spec.batch_norm);
    if (const auto cells = cfg.take_raw("cells")) {
        for (const auto& c : *cells) {
            expt::MeanfieldCell cell;
            cell.depth = c.at("depth").get<int>();
            cell.batch = c.at("batch").get<std::size_t>();
            cell.batch_norm = c.at("batch_norm").get<bool>();
            spec.cells.push_back(cell);
        }
    }
    spec.width = cfg.get("width", spec.width);
    spec.lr_per_batch = cfg.get("lr_per_batch", spec.lr_per_batch);
    spec.momentum = cfg.get("momentum", spec.momentum);
    spec.epochs_bn = cfg.get("epochs_bn", spec.epochs_bn);
    spec.epochs_plain = cfg.get("epochs_plain", spec.epochs_plain);
    spec.noise_var = cfg.get("noise_var", spec.noise_var);
    spec.bim_epsilon = cfg.get("bim_epsilon", spec.bim_epsilon);
    spec.bim_step = cfg.get("bim_step", spec.bim_step);
    spec.bim_iterations = cfg.get("bim_iterations", spec.bim_iterations);
    spec.eval_count = cfg.get("eval_count", spec.eval_count);
    spec.bn_c = cfg.get("bn_c", spec.bn_c);
    if (const auto dir = cfg.take_raw("checkpoint_dir")) {
        spec.checkpoint_dir = dir->get<std::string>();
    }
    spec.seeds = cfg.get("seeds", spec.seeds);
    cfg.done();
    if (full_grid) {
        // Fig.-1-style raster; far beyond the reduced default grid.
        spec.depths = {5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60};
        spec.batch_sizes = {10, 30, 100, 300, 1000};
        std::cerr << "warning: --grid full runs " << spec.depths.size()
                  << "x" << spec.batch_sizes.size()
                  << " cells per variant and may take days\n";
    }
    return spec;
}

// ---------------------------------------------------------------------------

int cmd_fetch(const GlobalOptions& opts) {
    const auto paths = bnrl::data::fetch_mnist(resolve_data_dir(opts));
    std::cout << paths.train_images.string() << '\n'
              << paths.train_labels.string() << '\n'
              << paths.test_images.string() << '\n'
              << paths.test_labels.string() << '\n';
    return 0;
}

// Trains one MLP from a config and writes a checkpoint.
int cmd_train(const GlobalOptions& opts) {
    ConfigReader cfg(load_config_file(opts.config_path));
    cfg.expect_kind("train");
    const auto width = cfg.get<std::size_t>("width", 28);
    const auto hidden = cfg.get<std::vector<std::size_t>>("hidden",
                                                          {392, 196});
    const bool bn = cfg.get("batch_norm", false);
    const auto lr = cfg.get("learning_rate", 1e-2);
    const auto momentum = cfg.get("momentum", 0.0);
    const auto lambda = cfg.get("weight_decay", 0.0);
    const auto epochs = cfg.get("epochs", 50);
    const auto batch = cfg.get<std::size_t>("batch", 128);
    const auto seed = cfg.get<std::uint64_t>("seed", 1);
    const auto checkpoint =
        cfg.get<std::string>("checkpoint", "model.bnrl");
    cfg.done();

    expt::MlpBnSpec spec;
    spec.widths = {width};
    spec.batch_norm = {bn};
    if (lambda != 0.0) spec.lambda_per_width[width] = lambda;
    spec.learning_rate = lr;
    spec.momentum = momentum;
    spec.epochs = epochs;
    spec.batch = batch;
    spec.seeds = {seed};
    spec.eval_count = 0;
    spec.bim_iterations = 0;  // unused below

    // Reuse the mlp runner's architecture conventions but train directly so
    // we can checkpoint the model.
    const auto mnist = expt::load_mnist_context(resolve_data_dir(opts));
    bnrl::nn::Model model;
    const std::size_t d = width * width;
    std::size_t prev = d;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        model.add_affine(prev, hidden[i]);
        if (bn && i == 0) model.add_batchnorm(hidden[i]);
        model.add_relu();
        prev = hidden[i];
    }
    model.add_affine(prev, 10);
    bnrl::RandomSource init_rng(bnrl::derive_seed(seed, 0x1111));
    bnrl::nn::he_init(init_rng, model);

    // Train via the mlp_bn machinery-equivalent loop.
    const auto train28 = bnrl::data::normalize(mnist.train_raw);
    const auto resized = width == 28
                             ? train28
                             : bnrl::data::normalize(
                                   bnrl::data::resize_nearest(mnist.train_raw,
                                                              width),
                                   mnist.stats);
    bnrl::nn::SgdConfig sgd;
    sgd.learning_rate = lr;
    sgd.momentum = momentum;
    sgd.weight_decay = lambda;
    bnrl::RandomSource train_rng(bnrl::derive_seed(seed, 0x2222));
    std::vector<std::size_t> order(resized.count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        model.set_mode(bnrl::nn::Mode::Train);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[train_rng.next_u64() % i]);
        }
        for (std::size_t start = 0; start + 2 <= order.size() + 1;
             start += batch) {
            const std::size_t end = std::min(start + batch, order.size());
            if (end - start < 2) break;
            bnrl::Tensor x(end - start, resized.dim());
            std::vector<int> y(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const auto src = resized.inputs.row(order[i]);
                std::copy(src.begin(), src.end(), x.row(i - start).begin());
                y[i - start] = resized.labels[order[i]];
            }
            const auto result = bnrl::nn::forward_backward(
                model, x, y, bnrl::nn::LossKind::SoftmaxCrossEntropy);
            if (!std::isfinite(result.loss)) {
                std::cerr << "training diverged at epoch " << epoch << '\n';
                return 1;
            }
            bnrl::nn::sgd_step(model, sgd);
        }
    }
    bnrl::nn::refresh_batchnorm_stats(model, resized.inputs);
    bnrl::nn::save_model(checkpoint, model);

    model.set_mode(bnrl::nn::Mode::Eval);
    const auto test = width == 28
                          ? bnrl::data::normalize(mnist.test_raw, mnist.stats)
                          : bnrl::data::normalize(
                                bnrl::data::resize_nearest(mnist.test_raw,
                                                           width),
                                mnist.stats);
    const double acc = bnrl::nn::accuracy(
        model, test.inputs, test.labels,
        bnrl::nn::LossKind::SoftmaxCrossEntropy);
    std::cout << "checkpoint " << checkpoint << " test_acc " << acc << '\n';
    return 0;
}

// Attacks a checkpointed model on the MNIST test set.
int cmd_attack(const GlobalOptions& opts) {
    ConfigReader cfg(load_config_file(opts.config_path));
    cfg.expect_kind("attack");
    const auto checkpoint = cfg.get<std::string>("checkpoint", "model.bnrl");
    const auto method = cfg.get<std::string>("attack", "fgsm");
    const auto epsilon = cfg.get("epsilon", 0.1);
    const auto step = cfg.get("step_size", 1e-3);
    const auto iterations = cfg.get("iterations", 100);
    const auto width = cfg.get<std::size_t>("width", 28);
    const auto count = cfg.get<std::size_t>("count", 0);
    cfg.done();

    auto model = bnrl::nn::load_model(checkpoint);
    model.set_mode(bnrl::nn::Mode::Eval);
    const auto mnist = expt::load_mnist_context(resolve_data_dir(opts));
    auto test = width == 28
                    ? bnrl::data::normalize(mnist.test_raw, mnist.stats)
                    : bnrl::data::normalize(
                          bnrl::data::resize_nearest(mnist.test_raw, width),
                          mnist.stats);
    const std::size_t n =
        count == 0 ? test.count() : std::min(count, test.count());
    bnrl::Tensor x(n, test.dim());
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto src = test.inputs.row(i);
        std::copy(src.begin(), src.end(), x.row(i).begin());
        y[i] = test.labels[i];
    }

    const auto loss_kind = bnrl::nn::LossKind::SoftmaxCrossEntropy;
    const double clean = bnrl::nn::accuracy(model, x, y, loss_kind);
    bnrl::Tensor adv;
    if (method == "fgsm") {
        adv = bnrl::attack::fgsm(model, x, y, epsilon, loss_kind);
    } else if (method == "bim") {
        adv = bnrl::attack::pgd(
            model, x, y, bnrl::attack::bim_config(epsilon, step, iterations),
            loss_kind);
    } else if (method == "pgd") {
        bnrl::attack::AttackConfig acfg;
        acfg.norm = bnrl::attack::NormKind::Linf;
        acfg.epsilon = epsilon;
        acfg.step_size = step;
        acfg.iterations = iterations;
        acfg.random_init = true;
        bnrl::RandomSource rng(1);
        adv = bnrl::attack::pgd(model, x, y, acfg, loss_kind, &rng);
    } else {
        throw ConfigError("unknown attack \"" + method + "\"");
    }
    const double robust = bnrl::nn::accuracy(model, adv, y, loss_kind);
    std::cout << "clean_acc " << clean << " attack_acc " << robust << '\n';
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_path,
               const std::vector<std::string>& group_keys) {
    const auto records = expt::read_results_csv(in_path);
    const auto rows = expt::summarize(records, group_keys);
    expt::write_summary_csv(out_path, rows);
    std::cout << rows.size() << " groups -> " << out_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"batch-norm robustness laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "JSON config file");
    app.add_option("--data-dir", opts.data_dir,
                   "MNIST directory (default $BNRL_DATA_DIR, then ./data)");
    app.add_option("--out", opts.out_dir, "output directory");
    app.add_option("--threads", opts.threads, "worker threads");
    app.add_option("--seeds", opts.seeds_flag,
                   "seed list override, e.g. 1,2,3 or 1..5");

    auto* fetch = app.add_subcommand("fetch", "download + verify MNIST");
    auto* train = app.add_subcommand("train", "train one model to checkpoint");
    auto* atk = app.add_subcommand("attack", "attack a checkpointed model");
    auto* input_dim =
        app.add_subcommand("input-dim", "linear model vs input dimension");
    auto* mlp = app.add_subcommand("mlp-bn", "MLP with/without batch norm");
    auto* spheres = app.add_subcommand("spheres", "adversarial spheres");
    auto* meanfield =
        app.add_subcommand("meanfield", "depth x batch trainability sweep");
    std::string grid = "reduced";
    meanfield->add_option("--grid", grid, "reduced (default) or full");
    auto* mi = app.add_subcommand("mi", "entropy of checkpointed sweeps");
    auto* trace = app.add_subcommand("trace", "two-unit activation trace");
    auto* report = app.add_subcommand("report", "summarize a results CSV");
    std::string report_in, report_out = "summary.csv";
    std::vector<std::string> report_groups;
    report->add_option("--in", report_in, "results.csv path")->required();
    report->add_option("--out", report_out, "summary output path");
    report->add_option("--group", report_groups, "condition keys to group by");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fetch->parsed()) return cmd_fetch(opts);
        if (train->parsed()) return cmd_train(opts);
        if (atk->parsed()) return cmd_attack(opts);
        if (report->parsed())
            return cmd_report(report_in, report_out, report_groups);

        const json raw = load_config_file(opts.config_path);
        if (input_dim->parsed()) {
            ConfigReader cfg(raw);
            auto spec = parse_input_dim(cfg);
            apply_seed_override(opts, spec.seeds);
            const auto mnist =
                expt::load_mnist_context(resolve_data_dir(opts));
            return run_experiment(opts, "input-dim", raw, spec.seeds, [&] {
                return expt::run_input_dim(spec, mnist, opts.threads);
            });
        }
        if (mlp->parsed()) {
            ConfigReader cfg(raw);
            auto spec = parse_mlp_bn(cfg);
            apply_seed_override(opts, spec.seeds);
            const auto mnist =
                expt::load_mnist_context(resolve_data_dir(opts));
            return run_experiment(opts, "mlp-bn", raw, spec.seeds, [&] {
                return expt::run_mlp_bn(spec, mnist, opts.threads);
            });
        }
        if (spheres->parsed()) {
            ConfigReader cfg(raw);
            auto spec = parse_spheres(cfg);
            apply_seed_override(opts, spec.seeds);
            return run_experiment(opts, "spheres", raw, spec.seeds, [&] {
                return expt::run_spheres(spec, opts.threads);
            });
        }
        if (meanfield->parsed()) {
            if (grid != "reduced" && grid != "full") {
                throw ConfigError("--grid must be reduced or full");
            }
            ConfigReader cfg(raw);
            auto spec = parse_meanfield(cfg, grid == "full");
            apply_seed_override(opts, spec.seeds);
            const auto mnist =
                expt::load_mnist_context(resolve_data_dir(opts));
            return run_experiment(opts, "meanfield", raw, spec.seeds, [&] {
                return expt::run_meanfield_sweep(spec, mnist, opts.threads);
            });
        }
        if (mi->parsed()) {
            ConfigReader cfg(raw);
            cfg.expect_kind("mi_sweep");
            expt::MiSweepSpec spec;
            spec.checkpoint_dir =
                cfg.get<std::string>("checkpoint_dir", "checkpoints");
            spec.bits = cfg.get("bits", spec.bits);
            cfg.done();
            const auto mnist =
                expt::load_mnist_context(resolve_data_dir(opts));
            return run_experiment(opts, "mi", raw, {}, [&] {
                return expt::run_mi_sweep(spec, mnist);
            });
        }
        if (trace->parsed()) {
            ConfigReader cfg(raw);
            cfg.expect_kind("activation_trace");
            expt::TraceSpec spec;
            spec.with_batch_norm =
                cfg.get("batch_norm", spec.with_batch_norm);
            spec.epochs = cfg.get("epochs", spec.epochs);
            spec.checkpoint_every =
                cfg.get("checkpoint_every", spec.checkpoint_every);
            spec.learning_rate = cfg.get("learning_rate", spec.learning_rate);
            spec.weight_decay = cfg.get("weight_decay", spec.weight_decay);
            spec.batch = cfg.get<std::size_t>("batch", spec.batch);
            spec.seed = cfg.get<std::uint64_t>("seed", spec.seed);
            spec.out_csv = cfg.get<std::string>(
                "out_csv",
                (std::filesystem::path(opts.out_dir) / "trace.csv").string());
            cfg.done();
            if (!opts.seeds_flag.empty()) {
                spec.seed = parse_seed_list(opts.seeds_flag).front();
            }
            std::filesystem::create_directories(opts.out_dir);
            const auto mnist =
                expt::load_mnist_context(resolve_data_dir(opts));
            return run_experiment(opts, "trace", raw, {spec.seed}, [&] {
                return expt::run_activation_trace(spec, mnist);
            });
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
