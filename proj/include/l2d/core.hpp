#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "l2d/errors.hpp"

namespace l2d {

// Labels are 1-based throughout: classes are 1..n, deferring to expert j is
// label n+j.
using Label = int;
using ScoreVector = std::vector<double>;

struct LabelSpace {
    int n = 2;   // number of classes
    int n_e = 1; // number of experts

    int total() const { return n + n_e; }
    bool is_class_label(Label y) const { return y >= 1 && y <= n; }
    bool is_expert_label(Label y) const { return y > n && y <= n + n_e; }
    int expert_of(Label y) const { return y - n; } // 1-based expert index

    void validate() const {
        if (n < 2) throw config_error("LabelSpace: n must be >= 2");
        if (n_e < 1) throw config_error("LabelSpace: n_e must be >= 1");
    }
};

struct DistPoint {
    std::string id;
    std::vector<double> features;
    double weight = 0.0;              // marginal probability of the point
    std::vector<double> conditional;  // p(x, .), length n
};

// Finite-support distribution: the substrate for exact regret and bound
// computations. Marginal weights and each conditional sum to one.
struct FiniteDistribution {
    int n = 2;
    std::vector<DistPoint> points;

    std::size_t size() const { return points.size(); }

    std::size_t index_of(std::string_view id) const {
        for (std::size_t i = 0; i < points.size(); ++i)
            if (points[i].id == id) return i;
        throw unknown_point_error("unknown point id: " + std::string(id));
    }

    const DistPoint& at(std::size_t i) const {
        if (i >= points.size())
            throw unknown_point_error("point index " + std::to_string(i) +
                                      " out of range (have " + std::to_string(points.size()) + ")");
        return points[i];
    }

    void validate(double tol = 1e-12) const {
        if (n < 2) throw config_error("FiniteDistribution: n must be >= 2");
        if (points.empty()) throw config_error("FiniteDistribution: no points");
        double total = 0.0;
        for (const auto& p : points) {
            if (p.weight < 0.0 || !std::isfinite(p.weight))
                throw config_error("FiniteDistribution: bad weight at point " + p.id);
            total += p.weight;
            if (static_cast<int>(p.conditional.size()) != n)
                throw config_error("FiniteDistribution: conditional length != n at point " + p.id);
            double csum = 0.0;
            for (double c : p.conditional) {
                if (c < 0.0 || !std::isfinite(c))
                    throw config_error("FiniteDistribution: bad conditional at point " + p.id);
                csum += c;
            }
            if (std::abs(csum - 1.0) > tol)
                throw config_error("FiniteDistribution: conditional does not sum to 1 at point " + p.id);
        }
        if (std::abs(total - 1.0) > tol)
            throw config_error("FiniteDistribution: marginal weights sum to " + std::to_string(total));
    }
};

enum class CostKind {
    misclassification,            // c_j(x,y) = 1{g_j(x) != y}
    misclassification_plus_base,  // c_j(x,y) = 1{g_j(x) != y} + beta_j
    table,                        // explicit per-point cost rows (analysis sweeps)
};

inline std::string to_string(CostKind k) {
    switch (k) {
        case CostKind::misclassification: return "misclassification";
        case CostKind::misclassification_plus_base: return "misclassification_plus_base";
        case CostKind::table: return "table";
    }
    return "?";
}

inline CostKind cost_kind_from_string(std::string_view s) {
    if (s == "misclassification") return CostKind::misclassification;
    if (s == "misclassification_plus_base") return CostKind::misclassification_plus_base;
    if (s == "table") return CostKind::table;
    throw config_error("unknown expert cost kind: " + std::string(s));
}

// One expert over the points of a FiniteDistribution. Costs are the raw kind
// formula times `scale`; bound-verification mode sets scale so the whole
// panel lands in [0,1].
struct Expert {
    CostKind kind = CostKind::misclassification;
    double beta = 0.0;
    std::vector<Label> predictions;               // per point index (prediction kinds)
    std::vector<std::vector<double>> cost_table;  // per point index, length n (table kind)
    double lower_bound = 0.0;
    double upper_bound = 1.0;
    double scale = 1.0;

    Label predict(std::size_t point) const {
        if (point >= predictions.size())
            throw unknown_point_error("expert has no prediction for point index " + std::to_string(point));
        return predictions[point];
    }

    double cost(std::size_t point, Label y) const {
        double raw = 0.0;
        switch (kind) {
            case CostKind::misclassification:
                raw = predict(point) == y ? 0.0 : 1.0;
                break;
            case CostKind::misclassification_plus_base:
                raw = (predict(point) == y ? 0.0 : 1.0) + beta;
                break;
            case CostKind::table: {
                if (point >= cost_table.size())
                    throw unknown_point_error("expert cost table missing point index " + std::to_string(point));
                const auto& row = cost_table[point];
                if (y < 1 || static_cast<std::size_t>(y) > row.size())
                    throw invalid_label_error("cost table: label out of range");
                raw = row[static_cast<std::size_t>(y - 1)];
                break;
            }
        }
        const double c = raw * scale;
        if (c < lower_bound - 1e-12 || c > upper_bound + 1e-12)
            throw cost_bound_error("expert cost " + std::to_string(c) + " outside declared bounds [" +
                                   std::to_string(lower_bound) + ", " + std::to_string(upper_bound) + "]");
        return c;
    }
};

struct ExpertPanel {
    std::vector<Expert> experts;

    int size() const { return static_cast<int>(experts.size()); }

    double sum_lower() const {
        double s = 0.0;
        for (const auto& e : experts) s += e.lower_bound;
        return s;
    }

    double sum_upper() const {
        double s = 0.0;
        for (const auto& e : experts) s += e.upper_bound;
        return s;
    }

    bool within_unit_interval() const {
        for (const auto& e : experts)
            if (e.lower_bound < -1e-12 || e.upper_bound > 1.0 + 1e-12) return false;
        return true;
    }

    // Panel with all costs divided by max_j upper bound, for bound
    // computations that need costs in [0,1]. Identity when already there.
    ExpertPanel rescaled_for_bounds() const {
        double top = 0.0;
        for (const auto& e : experts) top = std::max(top, e.upper_bound);
        ExpertPanel out = *this;
        if (top <= 1.0) return out;
        for (auto& e : out.experts) {
            e.scale /= top;
            e.lower_bound /= top;
            e.upper_bound /= top;
        }
        return out;
    }
};

// Distribution plus its expert panel: the unit of serialization and of all
// exact analysis.
struct DeferralInstance {
    FiniteDistribution dist;
    ExpertPanel panel;

    LabelSpace space() const { return LabelSpace{dist.n, panel.size()}; }
};

inline void check_finite_scores(const ScoreVector& s) {
    for (double v : s)
        if (!std::isfinite(v)) throw invalid_score_error("score vector has a non-finite entry");
}

// Argmax with the fixed deterministic tie-break: smallest index wins.
// Returns a 1-based augmented label.
inline Label predict_label(const ScoreVector& s) {
    if (s.empty()) throw invalid_score_error("empty score vector");
    check_finite_scores(s);
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] > s[best]) best = i;
    return static_cast<Label>(best + 1);
}

// Per-input mass vector of the conditional analysis: class conditionals at
// class labels, cost-complement masses at expert labels. Its argmax is the
// optimal deferral decision.
struct QVector {
    std::vector<double> q;      // length n + n_e, nonnegative
    double normalizer = 0.0;    // Q = sum of q
    std::vector<double> q_bar;  // q / Q, a probability vector

    Label argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < q.size(); ++i)
            if (q[i] > q[best]) best = i;
        return static_cast<Label>(best + 1);
    }

    double max() const { return *std::max_element(q.begin(), q.end()); }
};

inline QVector build_q_vector(const FiniteDistribution& d, const ExpertPanel& panel, std::size_t point) {
    const DistPoint& p = d.at(point);
    if (!panel.within_unit_interval())
        throw cost_bound_error("q-vector requires expert costs in [0,1]; rescale the panel for bound mode");
    const int n = d.n;
    const int n_e = panel.size();
    QVector out;
    out.q.resize(static_cast<std::size_t>(n + n_e));
    for (int y = 0; y < n; ++y) out.q[static_cast<std::size_t>(y)] = p.conditional[static_cast<std::size_t>(y)];
    for (int j = 0; j < n_e; ++j) {
        double expected_cost = 0.0;
        for (int y = 1; y <= n; ++y)
            expected_cost += p.conditional[static_cast<std::size_t>(y - 1)] * panel.experts[static_cast<std::size_t>(j)].cost(point, y);
        out.q[static_cast<std::size_t>(n + j)] = std::max(0.0, 1.0 - expected_cost);
    }
    out.normalizer = std::accumulate(out.q.begin(), out.q.end(), 0.0);
    out.q_bar.resize(out.q.size());
    for (std::size_t i = 0; i < out.q.size(); ++i) out.q_bar[i] = out.q[i] / out.normalizer;
    return out;
}

inline QVector build_q_vector(const DeferralInstance& inst, std::size_t point) {
    return build_q_vector(inst.dist, inst.panel, point);
}

enum class ModelClassKind {
    linear,         // free bias
    mlp2,           // two-layer perceptron, free output bias
    all_measurable,
    bounded_scores, // per-coordinate |h| <= lambda, all values attainable
};

// Labels attainable as argmax at a point. Every shipped class has a free
// per-label degree of freedom, so the whole augmented set is reachable
// regardless of the input.
inline std::set<Label> reachable_labels(ModelClassKind, const LabelSpace& space) {
    std::set<Label> out;
    for (Label y = 1; y <= space.total(); ++y) out.insert(y);
    return out;
}

inline std::set<Label> reachable_labels(ModelClassKind kind, const LabelSpace& space,
                                        std::span<const double>) {
    return reachable_labels(kind, space);
}

} // namespace l2d
