// Command-line harness: deterministic training runs, consistency-bound
// sweeps, gap tables, learning-bound checks, and the standalone regret
// oracle suite.

#include <CLI11.hpp>

#include "l2d/l2d.hpp"

namespace {

l2d::ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) throw l2d::config_error("--config is required for this subcommand");
    return l2d::ExperimentConfig::load(path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"learning-to-defer toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int jobs = 1;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--seed", seed, "root seed (overrides config)");
    app.add_option("--jobs", jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "train a deferral model and evaluate the system");
    auto* verify = app.add_subcommand("verify", "sweep the consistency bound over random instances");
    auto* gaps = app.add_subcommand("gaps", "approximation-error minus minimizability-gap table");
    auto* lbound = app.add_subcommand("learning-bound", "finite-sample deferral bound check");
    auto* rcheck = app.add_subcommand("regret-check", "closed-form vs brute-force regret oracle suite");

    std::vector<double> lambdas{0.5, 1.0, 2.0, 4.0};
    std::vector<double> etas{0.0, 0.25, 0.5, 0.75, 1.0};
    gaps->add_option("--lambda", lambdas, "score bounds to tabulate");
    gaps->add_option("--eta", etas, "conditional probabilities to tabulate");

    int instances = 500;
    rcheck->add_option("--instances", instances, "number of random distributions")
        ->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return l2d::cmd_train(load_config(config_path), out_dir, seed);
        if (*verify) return l2d::cmd_verify(load_config(config_path), out_dir, seed, jobs);
        if (*gaps) return l2d::cmd_gaps(lambdas, etas, out_dir);
        if (*lbound) return l2d::cmd_learning_bound(load_config(config_path), out_dir, seed);
        if (*rcheck) return l2d::cmd_regret_check(instances, seed ? seed : 2024);
    } catch (const l2d::config_error& e) {
        std::fprintf(stderr, "ERROR kind=config message=\"%s\"\n", e.what());
        return 1;
    } catch (const l2d::cost_bound_error& e) {
        std::fprintf(stderr, "ERROR kind=cost_mode message=\"%s\"\n", e.what());
        return 1;
    } catch (const l2d::error& e) {
        std::fprintf(stderr, "ERROR kind=runtime message=\"%s\"\n", e.what());
        return 1;
    }
    return 1;
}
