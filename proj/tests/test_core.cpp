#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "l2d/analysis.hpp"
#include "l2d/core.hpp"
#include "l2d/random.hpp"
#include "l2d/serialize.hpp"

using namespace l2d;

TEST_CASE("label space invariants") {
    LabelSpace space{3, 2};
    space.validate();
    CHECK(space.total() == 5);
    CHECK(space.is_class_label(3));
    CHECK(space.is_expert_label(4));
    CHECK(space.expert_of(5) == 2);
    CHECK_THROWS_AS((LabelSpace{1, 1}).validate(), config_error);
    CHECK_THROWS_AS((LabelSpace{2, 0}).validate(), config_error);
}

TEST_CASE("predict_label argmax and tie-break") {
    CHECK(predict_label({0.1, 0.5, 0.2, 0.9, 0.3}) == 4);
    CHECK(predict_label({1.0, 1.0, 0.0, 0.0, 0.0}) == 1);
    CHECK(predict_label({0.0, 0.0, 0.0, 0.0, 0.0}) == 1);
    CHECK_THROWS_AS(predict_label({0.0, std::nan("")}), invalid_score_error);
    CHECK_THROWS_AS(predict_label({}), invalid_score_error);
}

TEST_CASE("predict_label shift and positive-scale invariance") {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 8));
        ScoreVector s(n);
        for (auto& v : s) v = rng.uniform(-5.0, 5.0);
        const Label base = predict_label(s);
        const double shift = rng.uniform(-10.0, 10.0);
        const double scale = rng.uniform(0.01, 10.0);
        ScoreVector t1 = s, t2 = s;
        for (auto& v : t1) v += shift;
        for (auto& v : t2) v *= scale;
        CHECK(predict_label(t1) == base);
        CHECK(predict_label(t2) == base);
    }
}

namespace {

DeferralInstance two_class_instance(double p1, double c_on_1, double c_on_2) {
    DeferralInstance inst;
    inst.dist.n = 2;
    DistPoint p;
    p.id = "x0";
    p.features = {0.0};
    p.weight = 1.0;
    p.conditional = {p1, 1.0 - p1};
    inst.dist.points.push_back(p);
    Expert e;
    e.kind = CostKind::table;
    e.cost_table = {{c_on_1, c_on_2}};
    e.lower_bound = std::min(c_on_1, c_on_2);
    e.upper_bound = std::max(c_on_1, c_on_2);
    inst.panel.experts.push_back(e);
    return inst;
}

} // namespace

TEST_CASE("q-vector worked example") {
    const auto inst = two_class_instance(0.7, 0.0, 1.0);
    const QVector q = build_q_vector(inst, 0);
    CHECK(q.q[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(q.q[1] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(q.q[2] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(q.normalizer == doctest::Approx(1.7).epsilon(1e-15));
    double sum = 0.0;
    for (double v : q.q_bar) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("q-vector degenerate experts") {
    SUBCASE("useless expert contributes zero mass") {
        const auto inst = two_class_instance(0.6, 1.0, 1.0);
        const QVector q = build_q_vector(inst, 0);
        CHECK(q.q[2] == doctest::Approx(0.0));
        CHECK(q.normalizer == doctest::Approx(1.0));
        CHECK(q.q_bar[0] == doctest::Approx(0.6));
        CHECK(q.q_bar[1] == doctest::Approx(0.4));
        CHECK(q.q_bar[2] == doctest::Approx(0.0));
    }
    SUBCASE("perfect free expert contributes full mass") {
        const auto inst = two_class_instance(0.6, 0.0, 0.0);
        const QVector q = build_q_vector(inst, 0);
        CHECK(q.q[2] == doctest::Approx(1.0));
        CHECK(q.normalizer == doctest::Approx(2.0));
    }
}

TEST_CASE("q-vector errors") {
    auto inst = two_class_instance(0.5, 0.2, 0.8);
    CHECK_THROWS_AS(build_q_vector(inst, 3), unknown_point_error);
    CHECK_THROWS_AS(inst.dist.index_of("nope"), unknown_point_error);
    SUBCASE("cost outside declared bounds") {
        inst.panel.experts[0].upper_bound = 0.5; // table still holds 0.8
        CHECK_THROWS_AS(build_q_vector(inst, 0), cost_bound_error);
    }
    SUBCASE("panel outside the unit interval refuses q construction") {
        inst.panel.experts[0].upper_bound = 1.4;
        inst.panel.experts[0].cost_table[0][1] = 1.4;
        CHECK_THROWS_AS(build_q_vector(inst, 0), cost_bound_error);
    }
}

TEST_CASE("q_bar is a probability vector on random instances") {
    Rng rng(11);
    for (int t = 0; t < 300; ++t) {
        DeferralInstance inst = random_instance(rng);
        for (std::size_t i = 0; i < inst.dist.size(); ++i) {
            const QVector q = build_q_vector(inst, i);
            double sum = 0.0;
            for (double v : q.q_bar) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            const int n_e = inst.panel.size();
            CHECK(q.normalizer >= 1.0 - 1e-12);
            CHECK(q.normalizer <= n_e + 1 + 1e-12);
        }
    }
}

TEST_CASE("Q attains n_e+1 exactly for zero-cost experts") {
    auto inst = two_class_instance(0.5, 0.0, 0.0);
    const QVector q = build_q_vector(inst, 0);
    CHECK(q.normalizer == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("reachable labels cover the augmented set for shipped classes") {
    const LabelSpace space{4, 3};
    for (auto kind : {ModelClassKind::linear, ModelClassKind::mlp2, ModelClassKind::all_measurable,
                      ModelClassKind::bounded_scores}) {
        const auto labels = reachable_labels(kind, space);
        CHECK(labels.size() == 7);
        CHECK(labels.count(1) == 1);
        CHECK(labels.count(7) == 1);
    }
}

TEST_CASE("panel rescaling for bound mode") {
    ExpertPanel panel;
    Expert e;
    e.kind = CostKind::misclassification_plus_base;
    e.beta = 0.3;
    e.predictions = {1};
    e.lower_bound = 0.3;
    e.upper_bound = 1.3;
    panel.experts.push_back(e);
    CHECK_FALSE(panel.within_unit_interval());
    const ExpertPanel scaled = panel.rescaled_for_bounds();
    CHECK(scaled.within_unit_interval());
    CHECK(scaled.experts[0].upper_bound == doctest::Approx(1.0));
    CHECK(scaled.experts[0].cost(0, 2) == doctest::Approx(1.0));
    CHECK(scaled.experts[0].cost(0, 1) == doctest::Approx(0.3 / 1.3));
    // already-unit panels are untouched
    ExpertPanel unit;
    Expert u;
    u.kind = CostKind::misclassification;
    u.predictions = {2};
    unit.experts.push_back(u);
    CHECK(unit.rescaled_for_bounds().experts[0].scale == 1.0);
}

TEST_CASE("instance JSON round-trip is bit-exact") {
    Rng rng(23);
    for (int t = 0; t < 40; ++t) {
        RandomInstanceOptions opts;
        opts.prediction_expert_prob = 1.0; // document form requires prediction kinds
        DeferralInstance inst = random_instance(rng, opts);
        if (rng.u01() < 0.5) {
            for (auto& e : inst.panel.experts) {
                e.kind = CostKind::misclassification_plus_base;
                e.beta = rng.uniform(0.0, 0.4);
                e.lower_bound = e.beta;
                e.upper_bound = 1.0 + e.beta;
            }
        }
        const json doc = to_json(inst);
        const std::string text = doc.dump();
        const DeferralInstance back = instance_from_json(json::parse(text));
        REQUIRE(back.dist.size() == inst.dist.size());
        for (std::size_t i = 0; i < inst.dist.size(); ++i) {
            CHECK(back.dist.points[i].id == inst.dist.points[i].id);
            CHECK(back.dist.points[i].weight == inst.dist.points[i].weight); // bitwise
            for (std::size_t k = 0; k < inst.dist.points[i].conditional.size(); ++k)
                CHECK(back.dist.points[i].conditional[k] == inst.dist.points[i].conditional[k]);
            for (std::size_t k = 0; k < inst.dist.points[i].features.size(); ++k)
                CHECK(back.dist.points[i].features[k] == inst.dist.points[i].features[k]);
        }
        for (int j = 0; j < inst.panel.size(); ++j) {
            CHECK(back.panel.experts[static_cast<std::size_t>(j)].beta ==
                  inst.panel.experts[static_cast<std::size_t>(j)].beta);
            CHECK(back.panel.experts[static_cast<std::size_t>(j)].predictions ==
                  inst.panel.experts[static_cast<std::size_t>(j)].predictions);
        }
        CHECK(to_json(back).dump() == text);
    }
}

TEST_CASE("table experts refuse document serialization") {
    const auto inst = two_class_instance(0.5, 0.1, 0.9);
    CHECK_THROWS_AS(to_json(inst), config_error);
}
