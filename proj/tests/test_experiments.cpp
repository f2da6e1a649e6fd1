#include <filesystem>
#include <doctest.h>

#include "bnrl/experiments.hpp"

namespace expt = bnrl::expt;
using expt::json;

namespace {

// Small enough to train in well under a second.
expt::SpheresExpSpec tiny_spheres() {
    expt::SpheresExpSpec spec;
    spec.data.train_count = 20;
    spec.data.test_count_per_class = 25;
    spec.learning_rates = {0.05};
    spec.batch_norm = {false, true};
    spec.hidden_width = 16;
    spec.batch = 10;
    spec.max_epochs = 30;
    spec.seeds = {1, 2};
    return spec;
}

bool records_equal(const std::vector<expt::ResultRecord>& a,
                   const std::vector<expt::ResultRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].experiment != b[i].experiment || a[i].seed != b[i].seed ||
            a[i].condition != b[i].condition || a[i].metric != b[i].metric ||
            a[i].value != b[i].value) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("summarize_values matches the SEM convention") {
    const auto s = expt::summarize_values({1.0, 2.0, 3.0});
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.sem == doctest::Approx(0.5773502691896258).epsilon(1e-12));
    CHECK(s.n == 3);

    const auto single = expt::summarize_values({4.2});
    CHECK(single.mean == 4.2);
    CHECK(single.sem == 0.0);

    const auto flat = expt::summarize_values({5, 5, 5, 5, 5});
    CHECK(flat.mean == 5.0);
    CHECK(flat.sem == 0.0);

    CHECK_THROWS_AS(expt::summarize_values({}), bnrl::ArgumentError);
}

TEST_CASE("summarize groups by experiment, condition keys, and metric") {
    std::vector<expt::ResultRecord> records;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        json c;
        c["width"] = 28;
        c["extra"] = static_cast<int>(seed);  // differs per seed
        records.push_back({"exp", seed, c, "acc",
                           static_cast<double>(seed)});
    }
    SUBCASE("selected keys merge the differing conditions") {
        const auto rows = expt::summarize(records, {"width"});
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].stat.n == 3);
        CHECK(rows[0].stat.mean == doctest::Approx(2.0));
        CHECK(rows[0].group.at("width") == 28);
        CHECK(rows[0].group.at("experiment") == "exp");
    }
    SUBCASE("empty key list groups by the full condition") {
        const auto rows = expt::summarize(records, {});
        CHECK(rows.size() == 3);
        for (const auto& row : rows) CHECK(row.stat.n == 1);
    }
}

TEST_CASE("predicted_damage") {
    CHECK(expt::predicted_damage(56 * 56, 28 * 28) == doctest::Approx(2.0));
    CHECK(expt::predicted_damage(112 * 112, 28 * 28) == doctest::Approx(4.0));
    CHECK(expt::predicted_damage(784, 784) == 1.0);
    CHECK_THROWS_AS(expt::predicted_damage(100, 200), bnrl::ArgumentError);
}

TEST_CASE("results csv round-trip preserves records bit-exactly") {
    std::vector<expt::ResultRecord> records;
    json c;
    c["lambda"] = 0.0225;
    c["batch_norm"] = true;
    records.push_back({"mlp_bn", 3, c, "attack_acc", 0.1234567890123456789});
    records.push_back({"mlp_bn", 4, c, "clean_loss", 1e-17});
    const auto path =
        std::filesystem::temp_directory_path() / "bnrl_records_test.csv";
    expt::write_results_csv(path, records);
    const auto loaded = expt::read_results_csv(path);
    CHECK(records_equal(records, loaded));
    std::filesystem::remove(path);
}

TEST_CASE("fingerprint is stable and key-order independent") {
    const json a = json::parse(R"({"x": 1, "y": [1, 2]})");
    const json b = json::parse(R"({"y": [1, 2], "x": 1})");
    CHECK(expt::fingerprint(a) == expt::fingerprint(b));
    const json c = json::parse(R"({"x": 2, "y": [1, 2]})");
    CHECK(expt::fingerprint(a) != expt::fingerprint(c));
}

TEST_CASE("run_cached invokes the runner exactly once") {
    const auto cache =
        std::filesystem::temp_directory_path() / "bnrl_cache_test";
    std::filesystem::remove_all(cache);
    json config;
    config["test"] = "run_cached";
    int calls = 0;
    auto runner = [&] {
        ++calls;
        std::vector<expt::ResultRecord> records;
        records.push_back({"cached", 1, json::object(), "value", 0.5});
        return records;
    };
    const auto first = expt::run_cached("unit", config, cache, runner);
    const auto second = expt::run_cached("unit", config, cache, runner);
    CHECK(calls == 1);
    CHECK(records_equal(first, second));

    json other = config;
    other["test"] = "different";
    expt::run_cached("unit", other, cache, runner);
    CHECK(calls == 2);
    std::filesystem::remove_all(cache);
}

TEST_CASE("run_jobs propagates worker exceptions") {
    std::vector<std::function<void()>> jobs;
    jobs.emplace_back([] {});
    jobs.emplace_back([] { throw bnrl::StateError("boom"); });
    jobs.emplace_back([] {});
    CHECK_THROWS_AS(expt::run_jobs(std::move(jobs), 2), bnrl::StateError);
}

TEST_CASE("spheres experiment is a pure function of (spec, seeds)") {
    const auto spec = tiny_spheres();
    const auto a = expt::run_spheres(spec, 1);
    const auto b = expt::run_spheres(spec, 1);
    CHECK(records_equal(a, b));
    // record order and values are independent of the worker count
    const auto c = expt::run_spheres(spec, 3);
    CHECK(records_equal(a, c));
    CHECK(!a.empty());
    for (const auto& r : a) {
        if (r.metric == "train_acc" || r.metric == "test_acc" ||
            r.metric == "trainable") {
            CHECK(r.value >= 0.0);
            CHECK(r.value <= 1.0);
        }
    }
}

TEST_CASE("experiment specs reject empty seed lists") {
    auto spec = tiny_spheres();
    spec.seeds.clear();
    CHECK_THROWS_AS(expt::run_spheres(spec, 1), bnrl::ConfigError);
}
