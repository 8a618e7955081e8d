#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "l2d/losses.hpp"
#include "l2d/random.hpp"

using namespace l2d;

namespace {

const LabelSpace kSpace32{3, 2}; // n=3, n_e=2 -> 5 augmented labels

ScoreVector uniform5() { return ScoreVector(5, 0.0); }

} // namespace

TEST_CASE("spec tokens parse and format") {
    CHECK(SurrogateSpec::parse("comp_sum:log").token() == "comp_sum:log");
    CHECK(SurrogateSpec::parse("comp_sum:gce(alpha=0.7)").token() == "comp_sum:gce(alpha=0.7)");
    CHECK(SurrogateSpec::parse("sum:rho(rho=1)").token() == "sum:rho(rho=1)");
    CHECK(SurrogateSpec::parse("constrained:hinge").token() == "constrained:hinge");
    CHECK(SurrogateSpec::parse("constrained:rho(rho=2,scope=classes)").constraint_over_classes_only);
    // defaults: gce alpha 0.7, rho 1.0
    CHECK(SurrogateSpec::parse("comp_sum:gce").alpha == doctest::Approx(0.7));
    CHECK(SurrogateSpec::parse("sum:rho").rho == doctest::Approx(1.0));
    for (const auto& spec : all_specs())
        CHECK(SurrogateSpec::parse(spec.token()).token() == spec.token());
    CHECK(all_specs().size() == 11);
}

TEST_CASE("spec token errors list the valid grammar") {
    bool threw = false;
    try {
        SurrogateSpec::parse("comp_sum:banana");
    } catch (const config_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("valid tokens") != std::string::npos);
    }
    CHECK(threw);
    CHECK_THROWS_AS(SurrogateSpec::parse("nope"), config_error);
    CHECK_THROWS_AS(SurrogateSpec::parse("sum:hinge"), config_error);
    CHECK_THROWS_AS(SurrogateSpec::parse("comp_sum:gce(alpha=1.5)"), config_error);
    CHECK_THROWS_AS(SurrogateSpec::parse("sum:rho(rho=-1)"), config_error);
}

TEST_CASE("base loss closed-form values at uniform scores") {
    const auto s = uniform5();
    CHECK(base_loss(SurrogateSpec::parse("comp_sum:log"), s, 1) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(base_loss(SurrogateSpec::parse("comp_sum:mae"), s, 3) ==
          doctest::Approx(0.8).epsilon(1e-12));
    CHECK(base_loss(SurrogateSpec::parse("comp_sum:exp"), s, 2) == doctest::Approx(4.0));
    // gce at uniform: (1 - (1/5)^alpha)/alpha
    const auto gce = SurrogateSpec::parse("comp_sum:gce(alpha=0.7)");
    CHECK(base_loss(gce, s, 1) ==
          doctest::Approx((1.0 - std::pow(0.2, 0.7)) / 0.7).epsilon(1e-12));
}

TEST_CASE("sum-rho loss vanishes beyond the margin") {
    const auto spec = SurrogateSpec::parse("sum:rho(rho=1)");
    CHECK(base_loss(spec, {2.0, 0.0, 0.0, 0.0, 0.0}, 1) == doctest::Approx(0.0));
    CHECK(base_loss(spec, {0.0, 0.0, 0.0, 0.0, 0.0}, 1) == doctest::Approx(4.0));
}

TEST_CASE("constrained losses enforce the zero-sum precondition") {
    const auto spec = SurrogateSpec::parse("constrained:hinge");
    CHECK_THROWS_AS(base_loss(spec, {1.0, 1.0, 1.0, 1.0, 1.0}, 1), constraint_error);
    const ScoreVector ok = project_constraint({1.0, 1.0, 1.0, 1.0, 1.0});
    CHECK_NOTHROW(base_loss(spec, ok, 1));
    // classes-only scope checks the first n entries
    auto scoped = SurrogateSpec::parse("constrained:hinge(scope=classes)");
    ScoreVector class_sum_zero{1.0, -1.0, 0.0, 5.0, 5.0};
    CHECK_NOTHROW(base_loss(scoped, class_sum_zero, 1, 3));
    CHECK_THROWS_AS(base_loss(scoped, {1.0, 1.0, 0.0, -2.0, 0.0}, 1, 3), constraint_error);
}

TEST_CASE("base loss label range errors") {
    CHECK_THROWS_AS(base_loss(SurrogateSpec{}, uniform5(), 0), invalid_label_error);
    CHECK_THROWS_AS(base_loss(SurrogateSpec{}, uniform5(), 6), invalid_label_error);
}

TEST_CASE("deferral loss cases") {
    std::vector<double> costs{0.25, 0.9};
    SUBCASE("correct class prediction") {
        CHECK(deferral_loss({0.0, 3.0, 0.0, 0.0, 0.0}, 2, kSpace32, costs) == 0.0);
    }
    SUBCASE("deferral pays the expert cost") {
        CHECK(deferral_loss({0.0, 0.0, 0.0, 3.0, 0.0}, 1, kSpace32, costs) == doctest::Approx(0.25));
    }
    SUBCASE("misclassification") {
        CHECK(deferral_loss({3.0, 0.0, 0.0, 0.0, 0.0}, 3, kSpace32, costs) == 1.0);
    }
    SUBCASE("expert label as y is rejected") {
        CHECK_THROWS_AS(deferral_loss({1.0, 0.0, 0.0, 0.0, 0.0}, 4, kSpace32, costs),
                        invalid_label_error);
    }
}

TEST_CASE("surrogate loss worked examples") {
    const auto log_spec = SurrogateSpec::parse("comp_sum:log");
    const auto s = uniform5();
    SUBCASE("cost weights scale the expert terms") {
        std::vector<double> costs{0.4, 0.9};
        CHECK(surrogate_loss(log_spec, s, 1, kSpace32, costs) ==
              doctest::Approx(1.7 * std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("cost-one experts vanish") {
        std::vector<double> costs{1.0, 1.0};
        CHECK(surrogate_loss(log_spec, s, 2, kSpace32, costs) ==
              doctest::Approx(base_loss(log_spec, s, 2)).epsilon(1e-15));
    }
    SUBCASE("free experts triple the uniform term") {
        std::vector<double> costs{0.0, 0.0};
        CHECK(surrogate_loss(log_spec, s, 3, kSpace32, costs) ==
              doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-12));
    }
}

TEST_CASE("single-expert log surrogate reduction") {
    // Independent transcription of the single-expert score-based surrogate:
    // -log softmax(y) - (1-c) log softmax(n+1).
    const LabelSpace space{3, 1};
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        ScoreVector s(4);
        for (auto& v : s) v = rng.uniform(-4.0, 4.0);
        const double c = rng.u01();
        const Label y = static_cast<Label>(rng.uniform_int(1, 3));
        double lse = 0.0;
        {
            double m = *std::max_element(s.begin(), s.end());
            double z = 0.0;
            for (double v : s) z += std::exp(v - m);
            lse = m + std::log(z);
        }
        const double reference = (lse - s[static_cast<std::size_t>(y - 1)]) + (1.0 - c) * (lse - s[3]);
        std::vector<double> costs{c};
        CHECK(surrogate_loss(SurrogateSpec::parse("comp_sum:log"), s, y, space, costs) ==
              doctest::Approx(reference).epsilon(1e-12));
    }
}

TEST_CASE("nonnegativity over random draws") {
    Rng rng(17);
    const auto specs = all_specs();
    for (int t = 0; t < 200; ++t) {
        const auto& spec = specs[static_cast<std::size_t>(t) % specs.size()];
        const int n = rng.uniform_int(2, 4);
        const int n_e = rng.uniform_int(1, 3);
        const LabelSpace space{n, n_e};
        ScoreVector s(static_cast<std::size_t>(space.total()));
        for (auto& v : s) v = rng.uniform(-5.0, 5.0);
        if (spec.family == LossFamily::constrained) s = project_constraint(std::move(s));
        std::vector<double> costs(static_cast<std::size_t>(n_e));
        for (auto& c : costs) c = rng.u01();
        const Label y = static_cast<Label>(rng.uniform_int(1, n));
        CHECK(surrogate_loss(spec, s, y, space, costs) >= 0.0);
        for (Label a = 1; a <= space.total(); ++a) CHECK(base_loss(spec, s, a) >= 0.0);
    }
}

TEST_CASE("comp-sum translation invariance") {
    Rng rng(29);
    for (const char* token : {"comp_sum:log", "comp_sum:exp", "comp_sum:gce", "comp_sum:mae"}) {
        const auto spec = SurrogateSpec::parse(token);
        for (int t = 0; t < 50; ++t) {
            ScoreVector s(6);
            for (auto& v : s) v = rng.uniform(-4.0, 4.0);
            ScoreVector shifted = s;
            const double delta = rng.uniform(-7.0, 7.0);
            for (auto& v : shifted) v += delta;
            const Label y = static_cast<Label>(rng.uniform_int(1, 6));
            CHECK(base_loss(spec, s, y) ==
                  doctest::Approx(base_loss(spec, shifted, y)).epsilon(1e-10));
        }
    }
}

TEST_CASE("midpoint convexity probe for convex variants") {
    Rng rng(31);
    for (const auto& spec : all_specs()) {
        if (!spec.is_convex()) continue;
        for (int t = 0; t < 40; ++t) {
            ScoreVector a(5), b(5);
            for (auto& v : a) v = rng.uniform(-3.0, 3.0);
            for (auto& v : b) v = rng.uniform(-3.0, 3.0);
            if (spec.family == LossFamily::constrained) {
                a = project_constraint(std::move(a));
                b = project_constraint(std::move(b));
            }
            ScoreVector mid(5);
            for (std::size_t i = 0; i < 5; ++i) mid[i] = 0.5 * (a[i] + b[i]);
            const Label y = static_cast<Label>(rng.uniform_int(1, 5));
            CHECK(base_loss(spec, mid, y) <=
                  0.5 * (base_loss(spec, a, y) + base_loss(spec, b, y)) + 1e-10);
        }
    }
}

TEST_CASE("project_constraint") {
    const ScoreVector projected = project_constraint({1.0, 2.0, 3.0, 4.0, 5.0});
    const ScoreVector expected{-2.0, -1.0, 0.0, 1.0, 2.0};
    for (std::size_t i = 0; i < 5; ++i) CHECK(projected[i] == doctest::Approx(expected[i]));
    CHECK(project_constraint(projected) == projected); // idempotent
    const ScoreVector zeros = project_constraint({3.3, 3.3, 3.3});
    for (double v : zeros) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("gamma transforms per table row") {
    const LabelSpace space{10, 2};
    SUBCASE("comp-sum log: sqrt with simplified bound 3*sqrt(2)*sqrt(eps)") {
        const auto g = gamma_of(SurrogateSpec::parse("comp_sum:log"), space);
        CHECK(g.shape == GammaShape::sqrt);
        CHECK_FALSE(g.removes_constants);
        const double eps = 0.3;
        CHECK(simplified_bound(g, eps, space) ==
              doctest::Approx(3.0 * std::sqrt(2.0) * std::sqrt(eps)).epsilon(1e-12));
    }
    SUBCASE("comp-sum mae: linear in the augmented label count, constants removed") {
        const auto g = gamma_of(SurrogateSpec::parse("comp_sum:mae"), space);
        CHECK(g.shape == GammaShape::linear);
        CHECK(g.removes_constants);
        CHECK(simplified_bound(g, 0.25, space) == doctest::Approx(12.0 * 0.25));
    }
    SUBCASE("constrained hinge: identity bound") {
        const auto g = gamma_of(SurrogateSpec::parse("constrained:hinge"), space);
        CHECK(g.removes_constants);
        CHECK(simplified_bound(g, 0.4, space) == doctest::Approx(0.4));
    }
    SUBCASE("gce coefficient depends on the augmented label count and alpha") {
        const auto g = gamma_of(SurrogateSpec::parse("comp_sum:gce(alpha=0.7)"), space);
        CHECK(g.coefficient == doctest::Approx(std::sqrt(2.0 * std::pow(12.0, 0.7))));
    }
    SUBCASE("mae coefficient n alone is refuted by a concrete deferral instance") {
        // n=2, n_e=1, q=(0.822828, 0.177172, 0.823682): predicting the
        // middle label has deferral regret 0.6465 but only 0.2287 mae
        // regret, so Gamma(t)=2t is too small while Gamma(t)=3t holds.
        const QVector q{{0.822828, 0.177172, 0.823682}, 1.823682, {}};
        const ScoreVector s{0.2275, 0.2388, 0.0670};
        const double def_regret = q.max() - q.q[1];
        double sur_loss = 0.0;
        for (std::size_t y = 0; y < 3; ++y)
            sur_loss += q.q[y] * base_loss(SurrogateSpec::parse("comp_sum:mae"), s, static_cast<Label>(y + 1));
        const double sur_opt = q.normalizer - q.max();
        CHECK(def_regret > 2.0 * (sur_loss - sur_opt));
        CHECK(def_regret <= 3.0 * (sur_loss - sur_opt));
    }
    SUBCASE("gamma starts at zero and rejects negatives") {
        for (const auto& spec : all_specs()) {
            const auto g = gamma_of(spec, space);
            CHECK(g(0.0) == 0.0);
            CHECK_THROWS_AS(g(-0.1), domain_error);
        }
    }
}

TEST_CASE("gamma is nondecreasing and concave on a grid") {
    const LabelSpace space{4, 2};
    for (const auto& spec : all_specs()) {
        const auto g = gamma_of(spec, space);
        double prev = 0.0;
        for (double t = 0.0; t <= 2.0; t += 0.05) {
            const double v = g(t);
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
        for (double t = 0.1; t <= 1.9; t += 0.1)
            CHECK(g(t) >= 0.5 * (g(t - 0.1) + g(t + 0.1)) - 1e-12);
    }
}

TEST_CASE("exponential clamp sets the overflow flag") {
    LossDiagnostics diag;
    const auto spec = SurrogateSpec::parse("comp_sum:exp");
    base_loss(spec, {80.0, 0.0, 0.0}, 2, 0, &diag);
    CHECK(diag.exp_clamped);
    base_loss(spec, {1.0, 0.0, 0.0}, 2, 0, &diag);
    CHECK_FALSE(diag.exp_clamped);
    CHECK(std::isfinite(base_loss(spec, {200.0, -200.0, 0.0}, 2, 0, nullptr)));
}

TEST_CASE("subgradient conventions at kinks") {
    // hinge at the kink t=1 takes the flat side: d/ds of max(0, 1+s) at s=-1 is 0
    const auto hinge = SurrogateSpec::parse("constrained:hinge");
    ScoreVector s = project_constraint({-1.0, 1.0, 0.0});
    s[0] = -1.0; // keep the kink exactly; sum stays within tolerance
    s[1] = 1.0;
    s[2] = 0.0;
    const auto g = base_loss_gradient(hinge, s, 3);
    CHECK(g[0] == doctest::Approx(0.0));
    CHECK(g[1] == doctest::Approx(1.0));
    // rho-margin right-derivative: slope -1/rho at t=0, 0 at t=rho
    const auto rho = SurrogateSpec::parse("sum:rho(rho=2)");
    const auto gr = base_loss_gradient(rho, {0.0, 0.0, 0.0}, 1);
    CHECK(gr[0] == doctest::Approx(-1.0)); // two margins at t=0, each -1/2
    const auto gkink = base_loss_gradient(rho, {2.0, 0.0, 0.0}, 1);
    CHECK(gkink[0] == doctest::Approx(0.0)); // both margins sit at t=rho, flat side
    const auto gmid = base_loss_gradient(rho, {1.0, 0.0, 0.0}, 1);
    CHECK(gmid[0] == doctest::Approx(-1.0)); // mid-ramp margins keep slope -1/rho
}
