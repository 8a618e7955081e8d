#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "l2d/experiment.hpp"

using namespace l2d;
namespace fs = std::filesystem;

namespace {

json minimal_config() {
    return json::parse(R"({
        "seed": 7,
        "task": {
            "n": 3, "n_e": 2, "input_dim": 2,
            "layout": {"radius": 2.5, "scale": 0.8},
            "experts": [{"accuracy": 0.9}, {"domain": [1, 2], "in_domain_accuracy": 1.0}],
            "cost_kind": 1,
            "train_size": 200, "test_size": 150, "grid_size": 40
        },
        "train": {"spec": "comp_sum:log", "architecture": "linear", "epochs": 10,
                   "batch_size": 32, "learning_rate": 0.05},
        "analysis": {"sweep_seeds": 5, "verify_specs": ["comp_sum:log", "sum:sq"]}
    })");
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("l2d_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("experiment config parsing fills defaults and round-trips") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    CHECK(cfg.seed == 7);
    CHECK(cfg.task.n == 3);
    CHECK(cfg.task.clusters.size() == 3);
    CHECK(cfg.task.experts[1].is_specialist);
    CHECK(cfg.train_size == 200);
    CHECK(cfg.spec.token() == "comp_sum:log");
    CHECK(cfg.verify_specs.size() == 2);
    CHECK(cfg.learning_bound_specs.size() == 1); // default filled
    CHECK(cfg.adam.beta1 == doctest::Approx(0.9));
    // effective config re-parses to the same document
    const ExperimentConfig again = ExperimentConfig::from_json(cfg.to_json());
    CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("config errors carry field-level messages") {
    json bad = minimal_config();
    bad["train"]["spec"] = "comp_sum:banana";
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad), config_error);
    json bad2 = minimal_config();
    bad2["task"]["cost_kind"] = 2; // betas missing
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad2), config_error);
    json bad3 = minimal_config();
    bad3["analysis"]["class"] = "everything";
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad3), config_error);
}

TEST_CASE("cmd_train writes deterministic artifacts") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    TempDir a("train_a"), b("train_b");
    CHECK(cmd_train(cfg, a.path.string()) == 0);
    CHECK(cmd_train(cfg, b.path.string()) == 0);
    for (const char* name : {"model.json", "loss_curve.csv", "evaluation.csv", "effective_config.json"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(a.path / name));
        CHECK(read_text_file(a.path / name) == read_text_file(b.path / name)); // byte-identical
    }
    const ScoreModel model = model_from_json(json::parse(read_text_file(a.path / "model.json")));
    CHECK(model.output_dim == 5);
    const std::string curve = read_text_file(a.path / "loss_curve.csv");
    CHECK(curve.rfind("epoch,mean_surrogate_loss\n", 0) == 0);
}

TEST_CASE("cmd_verify emits one row per (seed, spec) and exits cleanly") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    TempDir dir("verify");
    CHECK(cmd_verify(cfg, dir.path.string(), 0, 2) == 0);
    const std::string csv = read_text_file(dir.path / "verify.csv");
    const auto lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == 1 + 5 * 2); // header + sweep_seeds * verify_specs
    CHECK(csv.rfind("seed,spec,class,lhs,rhs,slack,holds,M_L,A_L,M_Ldef\n", 0) == 0);
}

TEST_CASE("cmd_verify with zero seeds writes only the header") {
    ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    cfg.sweep_seeds = 0;
    TempDir dir("verify0");
    CHECK(cmd_verify(cfg, dir.path.string()) == 0);
    const std::string csv = read_text_file(dir.path / "verify.csv");
    CHECK(csv == "seed,spec,class,lhs,rhs,slack,holds,M_L,A_L,M_Ldef\n");
}

TEST_CASE("cmd_gaps cross-checks the closed form") {
    TempDir dir("gaps");
    CHECK(cmd_gaps({0.5, 1.0, 2.0, 4.0}, {0.0, 0.5, 1.0}, dir.path.string()) == 0);
    const std::string csv = read_text_file(dir.path / "gaps.csv");
    CHECK(csv.rfind("eta,lambda,closed_form,numeric,abs_diff\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    CHECK_THROWS_AS(cmd_gaps({-1.0}, {0.5}, dir.path.string()), config_error);
}

TEST_CASE("learning-bound refuses unscaled kind-2 costs") {
    ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    cfg.task.cost_kind = 2;
    cfg.task.betas = {0.2, 0.1};
    CHECK_THROWS_AS(run_learning_bound(cfg, 1), cost_bound_error);
}

TEST_CASE("learning-bound rows hold on a tiny run") {
    ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    cfg.m_grid = {120};
    cfg.learning_bound_seeds = 1;
    cfg.rademacher_trials = 2;
    cfg.rademacher_restarts = 2;
    cfg.epochs = 10;
    TempDir dir("lb");
    CHECK(cmd_learning_bound(cfg, dir.path.string()) == 0);
    const std::string csv = read_text_file(dir.path / "learning_bound.csv");
    CHECK(csv.rfind("m,spec,seed,observed_lhs,bound_rhs,holds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(csv.find("true") != std::string::npos);
}

TEST_CASE("cmd_regret_check returns success on a clean run") {
    CHECK(cmd_regret_check(25, 99) == 0);
}

TEST_CASE("verify CSV bytes do not depend on the worker count") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(minimal_config());
    TempDir a("verify_j1"), b("verify_j3");
    CHECK(cmd_verify(cfg, a.path.string(), 0, 1) == 0);
    CHECK(cmd_verify(cfg, b.path.string(), 0, 3) == 0);
    CHECK(read_text_file(a.path / "verify.csv") == read_text_file(b.path / "verify.csv"));
}

TEST_CASE("reports serialize to JSON") {
    Rng rng(83);
    DeferralInstance inst = random_instance(rng);
    const auto spec = SurrogateSpec::parse("comp_sum:log");
    const auto cls = HypothesisClassSpec::all_measurable();
    const auto scores = random_score_map(rng, inst, spec, cls);
    const BoundRecord rec = verify_bound(spec, inst.dist, inst.panel, scores, cls);
    const json jrep = to_json(rec.report);
    CHECK(jrep.at("per_point").size() == inst.dist.size());
    CHECK(jrep.at("minimizability_gap_surrogate").get<double>() == rec.report.m_sur);
    const json jrec = to_json(rec);
    CHECK(jrec.at("holds").get<bool>() == rec.holds);
    CHECK(jrec.at("slack").get<double>() == rec.slack);
}
