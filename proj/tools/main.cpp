#include <CLI11.hpp>
#include <iostream>

#include "hsbi/cli.hpp"

namespace {

// merge CLI flag values over the config-file json
struct CommonFlags {
    std::string config_file;
    std::string task, method, output_dir;
    long n = -1;
    int n_sites = -1, points_per_site = -2, workers = -1;
    long seed = -1;
    int max_epochs = -1, patience = -1;
    double learning_rate = -1.0;
    int d_lat = -1, n_heads = -1;
    int n_observations = -1;
    long lc2st_n_cal = -1, lc2st_n_eval = -1;
    int lc2st_null_ensemble = -1;
    long n_posterior_samples = -1;
    int n_tarp_cases = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file (flags override file values)");
        cmd->add_option("--task", task, "task name from the registry");
        cmd->add_option("--method", method, "lf | direct | joint | mlp | no_grouping | pf");
        cmd->add_option("--n", n, "simulation budget N");
        cmd->add_option("--sites", n_sites, "number of sites n_s");
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--points", points_per_site, "observation points per site (functional tasks)");
        cmd->add_option("--workers", workers, "worker threads (default HSBI_WORKERS or cores)");
        cmd->add_option("--out", output_dir, "output directory");
        cmd->add_option("--max-epochs", max_epochs, "training epoch cap");
        cmd->add_option("--patience", patience, "early-stopping patience (epochs)");
        cmd->add_option("--lr", learning_rate, "learning rate");
        cmd->add_option("--d-lat", d_lat, "transformer latent width");
        cmd->add_option("--heads", n_heads, "attention heads");
        cmd->add_option("--observations", n_observations, "observations to average diagnostics over");
        cmd->add_option("--lc2st-cal", lc2st_n_cal, "lc2st calibration pairs");
        cmd->add_option("--lc2st-eval", lc2st_n_eval, "lc2st posterior draws per observation");
        cmd->add_option("--lc2st-null", lc2st_null_ensemble, "lc2st null-ensemble size H");
        cmd->add_option("--posterior-samples", n_posterior_samples, "posterior draws per case");
        cmd->add_option("--tarp-cases", n_tarp_cases, "held-out cases for tarp");
    }

    hsbi::RunConfig merged() const {
        hsbi::json j = config_file.empty() ? hsbi::json::object()
                                           : hsbi::load_config_file(config_file);
        if (!task.empty()) j["task"] = task;
        if (!method.empty()) j["method"] = method;
        if (n >= 0) j["n"] = n;
        if (n_sites >= 0) j["n_sites"] = n_sites;
        if (seed >= 0) j["seed"] = seed;
        if (points_per_site >= -1) j["points_per_site"] = points_per_site;
        if (workers >= 0) j["workers"] = workers;
        if (!output_dir.empty()) j["output_dir"] = output_dir;
        if (max_epochs >= 0) j["training"]["max_epochs"] = max_epochs;
        if (patience >= 0) j["training"]["patience"] = patience;
        if (learning_rate >= 0) j["training"]["learning_rate"] = learning_rate;
        if (d_lat >= 0) j["net"]["transformer"]["d_lat"] = d_lat;
        if (n_heads >= 0) j["net"]["transformer"]["n_heads"] = n_heads;
        if (n_observations >= 0) j["diagnostics"]["n_observations"] = n_observations;
        if (lc2st_n_cal >= 0) j["diagnostics"]["lc2st_n_cal"] = lc2st_n_cal;
        if (lc2st_n_eval >= 0) j["diagnostics"]["lc2st_n_eval"] = lc2st_n_eval;
        if (lc2st_null_ensemble >= 0) j["diagnostics"]["lc2st_null_ensemble"] = lc2st_null_ensemble;
        if (n_posterior_samples >= 0) j["diagnostics"]["n_posterior_samples"] = n_posterior_samples;
        if (n_tarp_cases >= 0) j["diagnostics"]["n_tarp_cases"] = n_tarp_cases;
        return hsbi::RunConfig::from_json(j);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical simulation-based inference with tokenised flow matching"};
    app.require_subcommand(1);

    CommonFlags sim_flags, train_flags, sample_flags, eval_flags;
    bool multi_site = false;
    bool resume = false;

    auto* sim = app.add_subcommand("simulate", "generate a dataset from the true simulator");
    sim_flags.attach(sim);
    sim->add_flag("--multi", multi_site, "multi-site dataset (N x n_s simulator calls)");

    auto* train = app.add_subcommand("train", "run a training pipeline (LF or an ablation)");
    train_flags.attach(train);
    train->add_flag("--resume", resume, "continue posterior training from a saved run");

    std::string run_dir, obs_dataset, out_dir, samples_a, samples_b, diagnostic;
    long obs_index = 0, n_samples = 1000, refine_n = 0;
    auto* sample = app.add_subcommand("sample", "draw posterior samples from a trained run");
    sample_flags.attach(sample);
    sample->add_option("--run", run_dir, "trained run directory")->required();
    sample->add_option("--obs", obs_dataset, "multi-site dataset holding the observation")->required();
    sample->add_option("--index", obs_index, "row of the observation dataset");
    sample->add_option("--draws", n_samples, "number of posterior draws");
    sample->add_option("--refine", refine_n, "sequential-refinement samples (0 = off)");

    auto* eval = app.add_subcommand("evaluate", "run a diagnostic against a trained run");
    eval_flags.attach(eval);
    eval->add_option("--run", run_dir, "trained run directory");
    eval->add_option("--diagnostic", diagnostic, "lc2st | tarp | mmd2 | ppc")->required();
    eval->add_option("--samples-a", samples_a, "sample directory (mmd2)");
    eval->add_option("--samples-b", samples_b, "sample directory (mmd2)");

    std::string sweep_config_file, bench_out;
    auto* bench = app.add_subcommand("benchmark", "sweep task x method x N x n_s cells");
    bench->add_option("--config", sweep_config_file, "sweep config JSON")->required();
    bench->add_option("--out", bench_out, "output directory")->required();

    std::vector<std::string> report_dirs;
    std::string report_out;
    bool cost_mode = false;
    long cost_n1 = 1000, cost_n2 = 1000;
    int cost_sites = 2;
    double cost_t_sim = 0.0, cost_t_like = 0.0;
    auto* report = app.add_subcommand("report", "aggregate evaluation outputs into CSV");
    report->add_option("--eval-dirs", report_dirs, "evaluation output directories");
    report->add_option("--out", report_out, "output CSV/JSON path");
    report->add_flag("--cost", cost_mode, "emit the simulator-vs-surrogate cost table");
    report->add_option("--n1", cost_n1, "single-site samples N1");
    report->add_option("--n2", cost_n2, "multi-site samples N2");
    report->add_option("--sites", cost_sites, "sites (patients) per sample");
    report->add_option("--t-sim", cost_t_sim, "seconds per true-simulator call");
    report->add_option("--t-like", cost_t_like, "seconds per surrogate draw");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return hsbi::cmd_simulate(sim_flags.merged(), multi_site);
        if (train->parsed()) return hsbi::cmd_train(train_flags.merged(), resume);
        if (sample->parsed()) {
            auto cfg = sample_flags.merged();
            return hsbi::cmd_sample(cfg, run_dir, obs_dataset, obs_index, n_samples,
                                    cfg.output_dir.empty() ? (run_dir + "/samples") : cfg.output_dir,
                                    refine_n);
        }
        if (eval->parsed()) {
            auto cfg = eval_flags.merged();
            if (diagnostic != "mmd2" && run_dir.empty())
                throw hsbi::ConfigError("--run is required for this diagnostic");
            return hsbi::cmd_evaluate(cfg, run_dir, diagnostic,
                                      cfg.output_dir.empty() ? (run_dir + "/eval") : cfg.output_dir,
                                      samples_a, samples_b);
        }
        if (bench->parsed())
            return hsbi::cmd_benchmark(hsbi::load_config_file(sweep_config_file), bench_out);
        if (report->parsed()) {
            if (cost_mode) {
                if (!(cost_t_sim > 0.0) || !(cost_t_like > 0.0))
                    throw hsbi::ConfigError("--cost requires positive --t-sim and --t-like");
                return hsbi::cmd_report_cost(cost_n1, cost_n2, cost_sites, cost_t_sim, cost_t_like,
                                             report_out);
            }
            if (report_dirs.empty() || report_out.empty())
                throw hsbi::ConfigError("report needs --eval-dirs and --out (or --cost)");
            return hsbi::cmd_report(report_dirs, report_out);
        }
    } catch (const hsbi::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hsbi::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const hsbi::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hsbi::TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hsbi::SimulationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hsbi::DiagnosticError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
