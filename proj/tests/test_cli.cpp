#include <doctest.h>

#include <fstream>

#include "hsbi/cli.hpp"

using namespace hsbi;

namespace {

json tiny_run_json(const std::string& task, const std::string& method, const fs::path& out) {
    json j;
    j["task"] = task;
    j["method"] = method;
    j["n"] = 40;
    j["n_sites"] = 2;
    j["seed"] = 3;
    j["output_dir"] = out.string();
    j["net"] = {{"arch", "transformer"},
                {"transformer", {{"n_blocks", 1}, {"n_heads", 2}, {"d_lat", 16}}},
                {"embedding", {{"d_id", 4}, {"d_pos", 4}, {"d_grp", 4}, {"d_fn", 4}}}};
    j["training"] = {{"max_epochs", 2}, {"patience", 2}, {"batch_size", 20},
                     {"learning_rate", 1e-3}};
    return j;
}

}  // namespace

TEST_CASE("config validation reports field paths") {
    json bad = tiny_run_json("gaussian_linear", "lf", "x");
    bad["training"]["batch_size"] = 0;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad), doctest::Contains("training"), ConfigError);
    json bad2 = tiny_run_json("gaussian_linear", "lf", "x");
    bad2["n"] = 0;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad2), doctest::Contains("'n'"), ConfigError);
    json bad3 = tiny_run_json("gaussian_linear", "lf", "x");
    bad3["n_sites"] = "many";
    CHECK_THROWS_AS(RunConfig::from_json(bad3), ConfigError);
}

TEST_CASE("simulate writes a dataset and reruns bit-identically") {
    const fs::path dir = fs::temp_directory_path() / "hsbi_cli_sim";
    fs::remove_all(dir);
    json j = tiny_run_json("sir", "lf", dir / "a");
    j["n"] = 25;
    RunConfig cfg = RunConfig::from_json(j);
    CHECK(cmd_simulate(cfg, false) == 0);
    const json manifest = read_manifest(dir / "a");
    CHECK(manifest.at("n").get<long>() == 25);
    CHECK(manifest.at("ledger").at("true_simulator_calls").get<long>() == 25);

    json j2 = j;
    j2["output_dir"] = (dir / "b").string();
    CHECK(cmd_simulate(RunConfig::from_json(j2), false) == 0);
    // bit-identical arrays on rerun with the same seed
    std::ifstream fa(dir / "a" / "y.bin", std::ios::binary);
    std::ifstream fb(dir / "b" / "y.bin", std::ios::binary);
    std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(da == db);
    CHECK(!da.empty());
    fs::remove_all(dir);
}

TEST_CASE("unknown task lists the registry in the error") {
    json j = tiny_run_json("bogus_task", "lf", "x");
    RunConfig cfg = RunConfig::from_json(j);
    CHECK_THROWS_WITH_AS(cmd_simulate(cfg, false), doctest::Contains("two_moons"), ConfigError);
}

TEST_CASE("train/sample/evaluate round trip on a tiny run") {
    const fs::path base = fs::temp_directory_path() / "hsbi_cli_run";
    fs::remove_all(base);
    json j = tiny_run_json("gaussian_mixture", "lf", base / "run");
    j["diagnostics"] = {{"n_observations", 2},     {"lc2st_n_cal", 60},
                        {"lc2st_n_eval", 40},      {"lc2st_cv_folds", 2},
                        {"lc2st_null_ensemble", 4},
                        {"lc2st_classifier_max_epochs", 20},
                        {"n_posterior_samples", 30}, {"n_tarp_cases", 5}};
    RunConfig cfg = RunConfig::from_json(j);
    CHECK(cmd_train(cfg, false) == 0);
    CHECK(fs::exists(base / "run" / "manifest.json"));
    CHECK(fs::exists(base / "run" / "surrogate" / "manifest.json"));
    CHECK(fs::exists(base / "run" / "posterior" / "manifest.json"));
    CHECK(fs::exists(base / "run" / "dataset_single" / "manifest.json"));
    CHECK(fs::exists(base / "run" / "dataset_multi" / "manifest.json"));

    // observation dataset + sampling
    json obs_j = tiny_run_json("gaussian_mixture", "lf", base / "obs");
    obs_j["n"] = 3;
    CHECK(cmd_simulate(RunConfig::from_json(obs_j), true) == 0);
    CHECK(cmd_sample(cfg, (base / "run").string(), (base / "obs").string(), 1, 25,
                     (base / "draws").string()) == 0);
    const json sm = read_manifest(base / "draws");
    CHECK(sm.at("n_samples").get<long>() == 25);

    // evaluate: lc2st + tarp on reduced settings
    CHECK(cmd_evaluate(cfg, (base / "run").string(), "lc2st", (base / "eval").string(), "", "") == 0);
    CHECK(fs::exists(base / "eval" / "lc2st.json"));
    CHECK(fs::exists(base / "eval" / "lc2st.csv"));
    CHECK(fs::exists(base / "eval" / "summary.csv"));
    {
        std::ifstream in(base / "eval" / "lc2st.json");
        json rep;
        in >> rep;
        CHECK(rep.at("per_observation").size() == 2);
        const double t = rep.at("mean_t_mse").get<double>();
        CHECK(t >= 0.0);
        CHECK(t <= 0.25);
    }
    json jt = j;
    jt["diagnostics"]["n_tarp_cases"] = 4;
    jt["diagnostics"]["n_posterior_samples"] = 20;
    CHECK(cmd_evaluate(RunConfig::from_json(jt), (base / "run").string(), "tarp",
                       (base / "tarp").string(), "", "") == 0);
    CHECK(fs::exists(base / "tarp" / "tarp.json"));
    CHECK(fs::exists(base / "tarp" / "tarp_curve.csv"));

    // ppc emits bands
    CHECK(cmd_evaluate(RunConfig::from_json(jt), (base / "run").string(), "ppc",
                       (base / "ppc").string(), "", "") == 0);
    CHECK(fs::exists(base / "ppc" / "ppc_bands.csv"));

    // mmd2 between two sample sets
    CHECK(cmd_sample(cfg, (base / "run").string(), (base / "obs").string(), 1, 25,
                     (base / "draws2").string()) == 0);
    CHECK(cmd_evaluate(RunConfig::from_json(jt), "", "mmd2", (base / "mmd").string(),
                       (base / "draws").string(), (base / "draws2").string()) == 0);
    CHECK(fs::exists(base / "mmd" / "mmd2.json"));

    // report aggregation
    CHECK(cmd_report({(base / "eval").string()}, (base / "report.csv").string()) == 0);
    std::ifstream rep(base / "report.csv");
    std::string line;
    std::getline(rep, line);
    CHECK(line == "task,method,N,n_s,metric,mean,ci95");
    fs::remove_all(base);
}

TEST_CASE("missing checkpoint directory is an explicit error") {
    RunConfig cfg = RunConfig::from_json(tiny_run_json("gaussian_linear", "lf", "x"));
    CHECK_THROWS_AS(load_run(fs::temp_directory_path() / "hsbi_definitely_missing"), FormatError);
    (void)cfg;
}

TEST_CASE("cost report reproduces the telemetry numbers") {
    const fs::path out = fs::temp_directory_path() / "hsbi_cost.json";
    CHECK(cmd_report_cost(1000, 1000, 2, 11.88, 0.00641, out.string()) == 0);
    std::ifstream in(out);
    json j;
    in >> j;
    CHECK(j.at("per_draw_speedup_rounded").get<long>() == 1853);
    CHECK(j.at("npe_hours").get<double>() == doctest::Approx(6.6));
    CHECK(j.at("lf_hours").get<double>() == doctest::Approx(3.3));
    fs::remove(out);
}

TEST_CASE("benchmark sweep caches finished cells") {
    const fs::path out = fs::temp_directory_path() / "hsbi_bench";
    fs::remove_all(out);
    json sweep;
    sweep["tasks"] = {"gaussian_mixture"};
    sweep["methods"] = {"lf"};
    sweep["n"] = {30};
    sweep["n_sites"] = {2};
    sweep["seed"] = 5;
    sweep["base"] = tiny_run_json("gaussian_mixture", "lf", "ignored");
    sweep["base"].erase("output_dir");
    sweep["base"]["diagnostics"] = {{"n_observations", 1},     {"lc2st_n_cal", 40},
                                    {"lc2st_n_eval", 20},      {"lc2st_cv_folds", 2},
                                    {"lc2st_null_ensemble", 0},
                                    {"lc2st_classifier_max_epochs", 10}};
    CHECK(cmd_benchmark(sweep, out.string()) == 0);
    CHECK(fs::exists(out / "results.csv"));
    // second invocation must reuse the finished cell (no retraining): the
    // results file is rebuilt from cached metrics
    const auto stamp = fs::last_write_time(out / "cells");
    CHECK(cmd_benchmark(sweep, out.string()) == 0);
    CHECK(fs::last_write_time(out / "cells") == stamp);
    fs::remove_all(out);
}
