#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "l2d/losses.hpp"
#include "l2d/random.hpp"
#include "oracles.hpp"

using namespace l2d;

namespace {

// The constrained-family loss rejects zero-sum violations beyond 1e-6, so
// its finite-difference step must stay below that.
double fd_step(const SurrogateSpec& spec) {
    return spec.family == LossFamily::constrained ? 5e-7 : 1e-5;
}

struct RandomConfig {
    LabelSpace space{2, 1};
    ScoreVector scores;
    Label y = 1;
    std::vector<double> costs;
};

RandomConfig draw_config(Rng& rng, const SurrogateSpec& spec) {
    RandomConfig cfg;
    const int total = rng.uniform_int(3, 8);
    const int n_e = rng.uniform_int(1, std::min(3, total - 2));
    cfg.space = LabelSpace{total - n_e, n_e};
    cfg.scores.resize(static_cast<std::size_t>(total));
    for (auto& v : cfg.scores) v = rng.uniform(-3.0, 3.0);
    if (spec.family == LossFamily::constrained) cfg.scores = project_constraint(std::move(cfg.scores));
    cfg.y = static_cast<Label>(rng.uniform_int(1, cfg.space.n));
    cfg.costs.resize(static_cast<std::size_t>(n_e));
    for (auto& c : cfg.costs) c = rng.u01();
    return cfg;
}

} // namespace

TEST_CASE("analytic surrogate gradients match central finite differences") {
    Rng rng(101);
    for (const auto& spec : all_specs()) {
        CAPTURE(spec.token());
        for (int t = 0; t < 25; ++t) {
            const RandomConfig cfg = draw_config(rng, spec);
            const auto analytic = surrogate_gradient(spec, cfg.scores, cfg.y, cfg.space, cfg.costs);
            const auto numeric = oracles::central_difference(
                [&](const ScoreVector& s) {
                    return surrogate_loss(spec, s, cfg.y, cfg.space, cfg.costs);
                },
                cfg.scores, fd_step(spec));
            const auto cmp = oracles::compare_gradients(analytic, numeric);
            CAPTURE(cmp.worst_rel);
            CAPTURE(cmp.worst_index);
            CHECK(cmp.ok);
        }
    }
}

TEST_CASE("log-loss gradient closed form at uniform scores with cost-one experts") {
    const LabelSpace space{3, 2};
    const ScoreVector s(5, 0.0);
    const std::vector<double> costs{1.0, 1.0};
    const auto g = surrogate_gradient(SurrogateSpec::parse("comp_sum:log"), s, 1, space, costs);
    CHECK(g[0] == doctest::Approx(0.2 - 1.0).epsilon(1e-12));
    for (std::size_t k = 1; k < 5; ++k) CHECK(g[k] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("rho surrogate gradient vanishes on the flat region") {
    const LabelSpace space{2, 1};
    const auto spec = SurrogateSpec::parse("sum:rho(rho=1)");
    // all margins beyond rho for both the class and the expert term
    const ScoreVector s{5.0, 0.0, 10.0};
    const std::vector<double> costs{0.5};
    const auto g = surrogate_gradient(spec, s, 1, space, costs);
    for (double v : g) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("base loss gradients match finite differences per label") {
    Rng rng(131);
    for (const auto& spec : all_specs()) {
        for (int t = 0; t < 10; ++t) {
            const RandomConfig cfg = draw_config(rng, spec);
            for (Label a = 1; a <= cfg.space.total(); ++a) {
                const auto analytic = base_loss_gradient(spec, cfg.scores, a);
                const auto numeric = oracles::central_difference(
                    [&](const ScoreVector& s) { return base_loss(spec, s, a); }, cfg.scores,
                    fd_step(spec));
                CHECK(oracles::compare_gradients(analytic, numeric).ok);
            }
        }
    }
}
