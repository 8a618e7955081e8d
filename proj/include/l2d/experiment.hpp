#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "l2d/analysis.hpp"
#include "l2d/serialize.hpp"

namespace l2d {

// stderr logging: "LEVEL key=value ..."; results go to files/stdout only.
inline void log_kv(const char* level, std::initializer_list<std::pair<const char*, std::string>> kv) {
    std::string line = level;
    for (const auto& [k, v] : kv) {
        line += ' ';
        line += k;
        line += '=';
        line += v;
    }
    std::fprintf(stderr, "%s\n", line.c_str());
}

// ---------------------------------------------------------------------------
// Experiment configuration (one JSON document per experiment)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "out";

    SyntheticTaskSpec task;
    int train_size = 2000;

    SurrogateSpec spec;
    ModelClassKind architecture = ModelClassKind::mlp2;
    int hidden_dim = 64;
    int epochs = 60;
    int batch_size = 32;
    double learning_rate = 0.02;
    OptimizerKind optimizer = OptimizerKind::adam;
    AdamParams adam;
    double weight_decay = 1e-4;
    bool constraint_projection = false;

    HypothesisClassSpec analysis_class = HypothesisClassSpec::all_measurable();
    std::vector<SurrogateSpec> verify_specs;
    int sweep_seeds = 100;
    double delta = 0.05;
    std::vector<int> m_grid{250, 1000, 4000};
    std::vector<SurrogateSpec> learning_bound_specs;
    int learning_bound_seeds = 3;
    int rademacher_trials = 5;
    int rademacher_restarts = 10;
    double b_loss_margin = 1.1;

    TrainConfig train_config(std::uint64_t run_seed) const {
        TrainConfig cfg;
        cfg.spec = spec;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.optimizer = optimizer;
        cfg.adam = adam;
        cfg.weight_decay = weight_decay;
        cfg.seed = run_seed;
        cfg.constraint_projection = constraint_projection;
        return cfg;
    }

    ScoreModel make_model(std::uint64_t run_seed) const {
        return ScoreModel::init(architecture, task.input_dim, hidden_dim, task.n + task.n_e, run_seed);
    }

    static ExperimentConfig from_json(const json& doc);
    json to_json() const;
    static ExperimentConfig load(const std::filesystem::path& path);
};

namespace detail {

inline HypothesisClassSpec class_from_json(const json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "all_measurable") return HypothesisClassSpec::all_measurable();
        throw config_error("analysis.class: unknown class '" + s + "'");
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "all_measurable") return HypothesisClassSpec::all_measurable();
    if (kind == "bounded_scores") return HypothesisClassSpec::bounded(j.at("lambda").get<double>());
    throw config_error("analysis.class.kind must be all_measurable or bounded_scores");
}

inline json class_to_json(const HypothesisClassSpec& cls) {
    if (!cls.is_bounded()) return "all_measurable";
    return json{{"kind", "bounded_scores"}, {"lambda", cls.lambda}};
}

inline ExpertProfile profile_from_json(const json& j) {
    ExpertProfile p;
    if (j.contains("domain")) {
        p.is_specialist = true;
        p.domain = j.at("domain").get<std::vector<Label>>();
        p.in_domain_accuracy = j.value("in_domain_accuracy", 1.0);
    } else {
        p.accuracy = j.at("accuracy").get<double>();
    }
    return p;
}

inline json profile_to_json(const ExpertProfile& p) {
    if (p.is_specialist) return json{{"domain", p.domain}, {"in_domain_accuracy", p.in_domain_accuracy}};
    return json{{"accuracy", p.accuracy}};
}

} // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig cfg;
    try {
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.output_dir = doc.value("output_dir", cfg.output_dir);
        if (doc.contains("task")) {
            const auto& t = doc.at("task");
            cfg.task.n = t.at("n").get<int>();
            cfg.task.n_e = t.at("n_e").get<int>();
            cfg.task.input_dim = t.value("input_dim", 2);
            if (t.contains("clusters")) {
                for (const auto& jc : t.at("clusters")) {
                    ClusterSpec c;
                    c.mean = jc.at("mean").get<std::vector<double>>();
                    c.scale = jc.at("scale").get<double>();
                    cfg.task.clusters.push_back(std::move(c));
                }
            } else {
                const auto layout = t.value("layout", json::object());
                cfg.task.clusters = ring_layout(cfg.task.n, cfg.task.input_dim,
                                                layout.value("radius", 2.0), layout.value("scale", 1.0));
            }
            cfg.task.label_noise = t.value("label_noise", 0.0);
            for (const auto& je : t.at("experts"))
                cfg.task.experts.push_back(detail::profile_from_json(je));
            cfg.task.cost_kind = t.value("cost_kind", 1);
            cfg.task.betas = t.value("betas", std::vector<double>{});
            if (cfg.task.cost_kind == 2 && cfg.task.betas.empty())
                throw config_error("task.betas required for cost_kind 2");
            cfg.task.grid_size = t.value("grid_size", 300);
            cfg.task.test_size = t.value("test_size", 2000);
            cfg.train_size = t.value("train_size", cfg.train_size);
            cfg.task.validate();
        }
        if (doc.contains("train")) {
            const auto& t = doc.at("train");
            cfg.spec = SurrogateSpec::parse(t.value("spec", std::string("comp_sum:log")));
            const std::string arch = t.value("architecture", std::string("mlp2"));
            if (arch == "linear") cfg.architecture = ModelClassKind::linear;
            else if (arch == "mlp2") cfg.architecture = ModelClassKind::mlp2;
            else throw config_error("train.architecture must be linear or mlp2");
            cfg.hidden_dim = t.value("hidden_dim", 64);
            cfg.epochs = t.value("epochs", cfg.epochs);
            cfg.batch_size = t.value("batch_size", cfg.batch_size);
            cfg.learning_rate = t.value("learning_rate", cfg.learning_rate);
            const std::string opt = t.value("optimizer", std::string("adam"));
            if (opt == "adam") cfg.optimizer = OptimizerKind::adam;
            else if (opt == "sgd") cfg.optimizer = OptimizerKind::sgd;
            else throw config_error("train.optimizer must be adam or sgd");
            cfg.adam.beta1 = t.value("adam_beta1", cfg.adam.beta1);
            cfg.adam.beta2 = t.value("adam_beta2", cfg.adam.beta2);
            cfg.adam.eps = t.value("adam_eps", cfg.adam.eps);
            cfg.weight_decay = t.value("weight_decay", cfg.weight_decay);
            cfg.constraint_projection =
                t.value("constraint_projection", cfg.spec.family == LossFamily::constrained);
        }
        if (doc.contains("analysis")) {
            const auto& a = doc.at("analysis");
            if (a.contains("class")) cfg.analysis_class = detail::class_from_json(a.at("class"));
            if (a.contains("verify_specs"))
                for (const auto& s : a.at("verify_specs"))
                    cfg.verify_specs.push_back(SurrogateSpec::parse(s.get<std::string>()));
            cfg.sweep_seeds = a.value("sweep_seeds", cfg.sweep_seeds);
            cfg.delta = a.value("delta", cfg.delta);
            if (a.contains("m_grid")) cfg.m_grid = a.at("m_grid").get<std::vector<int>>();
            if (a.contains("learning_bound_specs"))
                for (const auto& s : a.at("learning_bound_specs"))
                    cfg.learning_bound_specs.push_back(SurrogateSpec::parse(s.get<std::string>()));
            cfg.learning_bound_seeds = a.value("learning_bound_seeds", cfg.learning_bound_seeds);
            cfg.rademacher_trials = a.value("rademacher_trials", cfg.rademacher_trials);
            cfg.rademacher_restarts = a.value("rademacher_restarts", cfg.rademacher_restarts);
            cfg.b_loss_margin = a.value("b_loss_margin", cfg.b_loss_margin);
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("experiment config: ") + e.what());
    }
    if (cfg.verify_specs.empty()) cfg.verify_specs = all_specs();
    if (cfg.learning_bound_specs.empty())
        cfg.learning_bound_specs = {SurrogateSpec::parse("comp_sum:log")};
    if (cfg.sweep_seeds < 0) throw config_error("analysis.sweep_seeds must be nonnegative");
    return cfg;
}

inline json ExperimentConfig::to_json() const {
    json doc;
    doc["seed"] = seed;
    doc["output_dir"] = output_dir;
    json clusters = json::array();
    for (const auto& c : task.clusters) clusters.push_back({{"mean", c.mean}, {"scale", c.scale}});
    json experts = json::array();
    for (const auto& e : task.experts) experts.push_back(detail::profile_to_json(e));
    doc["task"] = {{"n", task.n},
                   {"n_e", task.n_e},
                   {"input_dim", task.input_dim},
                   {"clusters", std::move(clusters)},
                   {"label_noise", task.label_noise},
                   {"experts", std::move(experts)},
                   {"cost_kind", task.cost_kind},
                   {"betas", task.betas},
                   {"grid_size", task.grid_size},
                   {"test_size", task.test_size},
                   {"train_size", train_size}};
    doc["train"] = {{"spec", spec.token()},
                    {"architecture", architecture == ModelClassKind::linear ? "linear" : "mlp2"},
                    {"hidden_dim", hidden_dim},
                    {"epochs", epochs},
                    {"batch_size", batch_size},
                    {"learning_rate", learning_rate},
                    {"optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                    {"adam_beta1", adam.beta1},
                    {"adam_beta2", adam.beta2},
                    {"adam_eps", adam.eps},
                    {"weight_decay", weight_decay},
                    {"constraint_projection", constraint_projection}};
    json vspecs = json::array();
    for (const auto& s : verify_specs) vspecs.push_back(s.token());
    json lspecs = json::array();
    for (const auto& s : learning_bound_specs) lspecs.push_back(s.token());
    doc["analysis"] = {{"class", detail::class_to_json(analysis_class)},
                       {"verify_specs", std::move(vspecs)},
                       {"sweep_seeds", sweep_seeds},
                       {"delta", delta},
                       {"m_grid", m_grid},
                       {"learning_bound_specs", std::move(lspecs)},
                       {"learning_bound_seeds", learning_bound_seeds},
                       {"rademacher_trials", rademacher_trials},
                       {"rademacher_restarts", rademacher_restarts},
                       {"b_loss_margin", b_loss_margin}};
    return doc;
}

inline ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw config_error("cannot parse config " + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

// ---------------------------------------------------------------------------
// Command implementations (exit codes: 0 ok, 1 config error, 2 failed check)
// ---------------------------------------------------------------------------

inline std::filesystem::path prepare_output_dir(const ExperimentConfig& cfg,
                                                const std::string& override_dir) {
    std::filesystem::path dir = override_dir.empty() ? cfg.output_dir : override_dir;
    if (!std::filesystem::exists(dir)) {
        std::filesystem::create_directories(dir);
        log_kv("INFO", {{"event", "created_output_dir"}, {"path", dir.string()}});
    }
    return dir;
}

// Train one model per the config, evaluate the deferral system, emit
// artifacts (model JSON, loss curve CSV, evaluation CSV, effective config).
inline int cmd_train(const ExperimentConfig& cfg, const std::string& out_override = "",
                     std::uint64_t seed_override = 0) {
    const std::uint64_t seed = seed_override ? seed_override : cfg.seed;
    const auto dir = prepare_output_dir(cfg, out_override);
    write_text_file(dir / "effective_config.json", cfg.to_json().dump(2) + "\n");

    GeneratedTask task = generate_task(cfg.task, cfg.train_size, seed);
    TrainResult result = train(cfg.make_model(seed), task.train, cfg.train_config(seed));
    const SystemEvaluation ev = evaluate_system(result.model, task.test, task.space);

    write_text_file(dir / "model.json", to_json(result.model).dump() + "\n");

    CsvWriter curve({"epoch", "mean_surrogate_loss"});
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
        curve.begin_row().cell(static_cast<int>(e)).cell(result.loss_curve[e]);
    curve.write_file(dir / "loss_curve.csv");

    std::vector<std::string> header{"scope", "count", "accuracy", "route_predictor"};
    for (int j = 1; j <= task.space.n_e; ++j) header.push_back("route_expert_" + std::to_string(j));
    CsvWriter eval(header);
    eval.begin_row().cell(std::string("all")).cell(static_cast<int>(task.test.size())).cell(ev.system_accuracy);
    for (double r : ev.deferral_ratios) eval.cell(r);
    for (int y = 0; y < task.space.n; ++y) {
        eval.begin_row()
            .cell("class_" + std::to_string(y + 1))
            .cell(ev.per_class_counts[static_cast<std::size_t>(y)])
            .cell(ev.per_class_accuracy[static_cast<std::size_t>(y)]);
        for (double r : ev.per_class_routing[static_cast<std::size_t>(y)]) eval.cell(r);
    }
    eval.write_file(dir / "evaluation.csv");

    std::printf("train spec=%s m=%d seed=%llu system_accuracy=%.4f final_loss=%.6f\n",
                cfg.spec.token().c_str(), cfg.train_size, static_cast<unsigned long long>(seed),
                ev.system_accuracy, result.loss_curve.empty() ? 0.0 : result.loss_curve.back());
    return 0;
}

// Consistency-bound sweep over random (distribution, panel, hypothesis)
// triples; exits 2 on any violated row.
inline int cmd_verify(const ExperimentConfig& cfg, const std::string& out_override = "",
                      std::uint64_t seed_override = 0, int jobs = 1) {
    const std::uint64_t seed = seed_override ? seed_override : cfg.seed;
    const auto dir = prepare_output_dir(cfg, out_override);
    write_text_file(dir / "effective_config.json", cfg.to_json().dump(2) + "\n");

    const auto rows = run_bound_sweep(cfg.verify_specs, cfg.sweep_seeds, cfg.analysis_class, seed, jobs);
    CsvWriter csv({"seed", "spec", "class", "lhs", "rhs", "slack", "holds", "M_L", "A_L", "M_Ldef"});
    std::size_t violations = 0;
    for (const auto& row : rows) {
        csv.begin_row()
            .cell(row.seed)
            .cell(row.spec)
            .cell(row.cls)
            .cell(row.lhs)
            .cell(row.rhs)
            .cell(row.slack)
            .cell(row.holds)
            .cell(row.m_sur)
            .cell(row.a_sur)
            .cell(row.m_def);
        if (!row.holds) ++violations;
    }
    csv.write_file(dir / "verify.csv");
    std::printf("verify rows=%zu violations=%zu\n", rows.size(), violations);
    if (violations) {
        log_kv("ERROR", {{"event", "bound_violation"}, {"rows", std::to_string(violations)}});
        return 2;
    }
    return 0;
}

// Closed-form vs numeric approximation-error-minus-gap table.
inline int cmd_gaps(const std::vector<double>& lambdas, const std::vector<double>& etas,
                    const std::string& out_dir) {
    for (double l : lambdas)
        if (!(l > 0.0)) throw config_error("gaps: lambdas must be positive");
    std::filesystem::path dir = out_dir.empty() ? "out" : out_dir;
    std::filesystem::create_directories(dir);
    CsvWriter csv({"eta", "lambda", "closed_form", "numeric", "abs_diff"});
    double worst = 0.0;
    for (double eta : etas) {
        for (double lambda : lambdas) {
            const double closed = binary_exp_gap(eta, lambda);
            const double numeric = binary_exp_gap_numeric(eta, lambda);
            const double diff = std::abs(closed - numeric);
            worst = std::max(worst, diff);
            csv.begin_row().cell(eta).cell(lambda).cell(closed).cell(numeric).cell(diff);
        }
    }
    csv.write_file(dir / "gaps.csv");
    std::printf("gaps rows=%zu max_abs_diff=%.3e\n", lambdas.size() * etas.size(), worst);
    return worst < 1e-6 ? 0 : 2;
}

struct LearningBoundRow {
    int m = 0;
    std::string spec;
    std::uint64_t seed = 0;
    double observed_lhs = 0.0;
    double bound_rhs = 0.0;
    bool holds = false;
};

// Trains the empirical minimizer per sample size, measures its deferral
// estimation error exactly on the grid, and evaluates the finite-sample
// bound with the Monte-Carlo Rademacher term.
inline std::vector<LearningBoundRow> run_learning_bound(const ExperimentConfig& cfg,
                                                        std::uint64_t seed) {
    if (cfg.task.cost_kind != 1) {
        bool zero_betas = true;
        for (double b : cfg.task.betas) zero_betas = zero_betas && b == 0.0;
        if (!zero_betas)
            throw cost_bound_error(
                "learning-bound requires costs in [0,1]: use cost_kind 1 (or zero betas)");
    }
    std::vector<LearningBoundRow> rows;
    for (const SurrogateSpec& spec : cfg.learning_bound_specs) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.spec = spec;
        run_cfg.constraint_projection = spec.family == LossFamily::constrained;
        for (int m : cfg.m_grid) {
            for (int s = 0; s < cfg.learning_bound_seeds; ++s) {
                const std::uint64_t run_seed = derive_seed(seed, static_cast<std::uint64_t>(m) * 131 +
                                                                     static_cast<std::uint64_t>(s));
                GeneratedTask task = generate_task(cfg.task, m, run_seed);
                TrainResult res =
                    train(run_cfg.make_model(run_seed), task.train, run_cfg.train_config(run_seed));

                std::vector<ScoreVector> grid_scores;
                ScoreVector sc;
                std::vector<double> hidden;
                for (const auto& p : task.grid.dist.points) {
                    res.model.forward(p.features, sc, hidden);
                    grid_scores.push_back(sc);
                }
                const RegretReport rep = expected_losses(spec, task.grid.dist, task.grid.panel,
                                                         grid_scores, HypothesisClassSpec::all_measurable());
                const double observed_lhs = rep.e_def - rep.e_def_star + rep.m_sur;

                const double b_loss =
                    cfg.b_loss_margin * max_surrogate_loss(spec, res.model, task.train, task.space);
                RademacherModelClass rad_class;
                rad_class.arch = cfg.architecture;
                rad_class.input_dim = cfg.task.input_dim;
                rad_class.hidden_dim = cfg.hidden_dim;
                rad_class.output_dim = task.space.total();
                rad_class.weight_norm_bound = std::max(1.0, 1.5 * res.model.parameter_norm());
                RademacherOptions rad_opts;
                rad_opts.restarts = cfg.rademacher_restarts;
                const RademacherEstimate rad =
                    estimate_rademacher(spec, task.train, rad_class, cfg.rademacher_trials,
                                        derive_seed(run_seed, 0xADUL), rad_opts);

                BoundConstants costs;
                costs.n_e = task.space.n_e;
                costs.sum_lower = task.grid.panel.sum_lower();
                costs.sum_upper = task.grid.panel.sum_upper();
                const GammaTransform gamma = gamma_of(spec, task.space);
                const double rhs = learning_bound_rhs(gamma, std::max(0.0, rad.estimate), b_loss,
                                                      m, cfg.delta, rep.m_sur, costs);
                LearningBoundRow row;
                row.m = m;
                row.spec = spec.token();
                row.seed = static_cast<std::uint64_t>(s);
                row.observed_lhs = observed_lhs;
                row.bound_rhs = rhs;
                row.holds = observed_lhs <= rhs + 1e-9;
                rows.push_back(row);
                log_kv("INFO", {{"event", "learning_bound_row"},
                                {"spec", row.spec},
                                {"m", std::to_string(m)},
                                {"lhs", csv_double(row.observed_lhs)},
                                {"rhs", csv_double(row.bound_rhs)}});
            }
        }
    }
    return rows;
}

inline int cmd_learning_bound(const ExperimentConfig& cfg, const std::string& out_override = "",
                              std::uint64_t seed_override = 0) {
    const std::uint64_t seed = seed_override ? seed_override : cfg.seed;
    const auto dir = prepare_output_dir(cfg, out_override);
    write_text_file(dir / "effective_config.json", cfg.to_json().dump(2) + "\n");
    const auto rows = run_learning_bound(cfg, seed);
    CsvWriter csv({"m", "spec", "seed", "observed_lhs", "bound_rhs", "holds"});
    std::size_t violations = 0;
    for (const auto& r : rows) {
        csv.begin_row().cell(r.m).cell(r.spec).cell(r.seed).cell(r.observed_lhs).cell(r.bound_rhs).cell(r.holds);
        if (!r.holds) ++violations;
    }
    csv.write_file(dir / "learning_bound.csv");
    std::printf("learning-bound rows=%zu violations=%zu\n", rows.size(), violations);
    return violations ? 2 : 0;
}

// Independent oracle pass for the conditional formulas: brute force over
// forced argmax labels for the deferral side, and the direct expectation of
// the surrogate for the conditional surrogate loss.
inline double direct_conditional_deferral(const FiniteDistribution& dist, const ExpertPanel& panel,
                                          std::size_t point, Label forced) {
    const DistPoint& p = dist.at(point);
    if (forced <= dist.n) return 1.0 - p.conditional[static_cast<std::size_t>(forced - 1)];
    const int j = forced - dist.n;
    double expected = 0.0;
    for (int y = 1; y <= dist.n; ++y)
        expected += p.conditional[static_cast<std::size_t>(y - 1)] *
                    panel.experts[static_cast<std::size_t>(j - 1)].cost(point, y);
    return expected;
}

inline std::vector<ScoreVector> grid_scores(const ScoreModel& model, const DeferralInstance& grid) {
    std::vector<ScoreVector> out;
    ScoreVector sc;
    std::vector<double> hidden;
    for (const auto& p : grid.dist.points) {
        model.forward(p.features, sc, hidden);
        out.push_back(sc);
    }
    return out;
}

// Exact expected deferral loss of per-point decisions, via the direct
// conditional expectation; valid for any bounded costs.
inline double expected_deferral_loss(const DeferralInstance& inst,
                                     const std::vector<ScoreVector>& scores) {
    if (scores.size() != inst.dist.size())
        throw config_error("expected_deferral_loss: need one score vector per point");
    double total = 0.0;
    for (std::size_t i = 0; i < inst.dist.size(); ++i)
        total += inst.dist.points[i].weight *
                 direct_conditional_deferral(inst.dist, inst.panel, i, predict_label(scores[i]));
    return total;
}

// Best achievable expected deferral loss over per-point decision rules.
inline double bayes_deferral_loss(const DeferralInstance& inst) {
    const int total_labels = inst.space().total();
    double total = 0.0;
    for (std::size_t i = 0; i < inst.dist.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Label forced = 1; forced <= total_labels; ++forced)
            best = std::min(best, direct_conditional_deferral(inst.dist, inst.panel, i, forced));
        total += inst.dist.points[i].weight * best;
    }
    return total;
}

struct RegretCheckResult {
    int instances = 0;
    int points = 0;
    double max_deferral_diff = 0.0;
    double max_surrogate_diff = 0.0;
    bool ok = false;
};

inline RegretCheckResult run_regret_check(int num_instances, std::uint64_t seed,
                                          double tolerance = 1e-12) {
    RegretCheckResult res;
    const auto specs = all_specs();
    for (int t = 0; t < num_instances; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        DeferralInstance inst = random_instance(rng);
        const LabelSpace space = inst.space();
        ++res.instances;
        for (std::size_t i = 0; i < inst.dist.size(); ++i) {
            ++res.points;
            const QVector q = build_q_vector(inst, i);
            ScoreVector s(static_cast<std::size_t>(space.total()));
            for (auto& v : s) v = rng.uniform(-3.0, 3.0);

            // closed form vs forced-label brute force
            const ConditionalRegret cd = conditional_deferral(q, s);
            double brute_opt = 2.0;
            for (Label forced = 1; forced <= space.total(); ++forced)
                brute_opt = std::min(brute_opt, direct_conditional_deferral(inst.dist, inst.panel, i, forced));
            const double brute_loss = direct_conditional_deferral(inst.dist, inst.panel, i, predict_label(s));
            res.max_deferral_diff = std::max(res.max_deferral_diff, std::abs(cd.optimal - brute_opt));
            res.max_deferral_diff = std::max(res.max_deferral_diff, std::abs(cd.loss - brute_loss));
            res.max_deferral_diff =
                std::max(res.max_deferral_diff, std::abs(cd.regret - (brute_loss - brute_opt)));

            // conditional surrogate loss vs direct expectation of the surrogate
            for (const auto& spec : specs) {
                ScoreVector scores = spec.family == LossFamily::constrained ? project_constraint(s) : s;
                const double via_q = conditional_surrogate_value(spec, q, scores, space.n);
                double direct = 0.0;
                for (Label y = 1; y <= space.n; ++y) {
                    const double py = inst.dist.points[i].conditional[static_cast<std::size_t>(y - 1)];
                    if (py == 0.0) continue;
                    direct += py * surrogate_loss(spec, scores, y, inst.dist, inst.panel, i);
                }
                res.max_surrogate_diff = std::max(res.max_surrogate_diff, std::abs(via_q - direct));
            }
        }
    }
    res.ok = res.max_deferral_diff <= tolerance && res.max_surrogate_diff <= tolerance;
    return res;
}

inline int cmd_regret_check(int num_instances, std::uint64_t seed) {
    const RegretCheckResult res = run_regret_check(num_instances, seed);
    std::printf("regret-check instances=%d points=%d max_deferral_diff=%.3e max_surrogate_diff=%.3e %s\n",
                res.instances, res.points, res.max_deferral_diff, res.max_surrogate_diff,
                res.ok ? "ok" : "FAILED");
    return res.ok ? 0 : 2;
}

} // namespace l2d
