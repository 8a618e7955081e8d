#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/losses.hpp"
#include "l2d/random.hpp"
#include "l2d/training.hpp"

namespace l2d {

// ---------------------------------------------------------------------------
// Hypothesis classes
// ---------------------------------------------------------------------------

// Per-point score sets used by the exact analysis: unconstrained scores, or
// every coordinate confined to [-lambda, lambda]. Both realize any argmax,
// so pointwise infima interchange with expectation on finite support.
struct HypothesisClassSpec {
    ModelClassKind kind = ModelClassKind::all_measurable;
    double lambda = 1.0;

    static HypothesisClassSpec all_measurable() { return {ModelClassKind::all_measurable, 0.0}; }
    static HypothesisClassSpec bounded(double lambda) {
        if (!(lambda > 0.0)) throw config_error("bounded_scores requires lambda > 0");
        return {ModelClassKind::bounded_scores, lambda};
    }

    bool is_bounded() const { return kind == ModelClassKind::bounded_scores; }

    std::string name() const {
        if (!is_bounded()) return "all_measurable";
        return "bounded_scores(lambda=" + detail::format_param(lambda) + ")";
    }
};

// ---------------------------------------------------------------------------
// Conditional deferral loss and regret (exact)
// ---------------------------------------------------------------------------

struct ConditionalRegret {
    double loss = 0.0;
    double optimal = 0.0;
    double regret = 0.0;
};

// Conditional deferral loss is 1 - q(h(x)); the optimum over a class with a
// full reachable label set is 1 - max_y q(y).
inline ConditionalRegret conditional_deferral(const QVector& q, const ScoreVector& s) {
    if (q.q.size() != s.size())
        throw invalid_score_error("conditional_deferral: q and score lengths differ");
    const Label pred = predict_label(s);
    ConditionalRegret out;
    out.loss = 1.0 - q.q[static_cast<std::size_t>(pred - 1)];
    out.optimal = 1.0 - q.max();
    out.regret = out.loss - out.optimal;
    return out;
}

// Conditional surrogate loss: sum_y q(y) * base_loss(s, y) over the
// augmented label set.
inline double conditional_surrogate_value(const SurrogateSpec& spec, const QVector& q,
                                          const ScoreVector& s, int n_classes = 0) {
    if (q.q.size() != s.size())
        throw invalid_score_error("conditional_surrogate_value: q and score lengths differ");
    double total = 0.0;
    for (std::size_t y = 0; y < q.q.size(); ++y)
        if (q.q[y] != 0.0)
            total += q.q[y] * base_loss(spec, s, static_cast<Label>(y + 1), n_classes);
    return total;
}

// ---------------------------------------------------------------------------
// Per-point infimum of the conditional surrogate loss
// ---------------------------------------------------------------------------

struct InnerOptions {
    int restarts = 20;
    int max_steps = 2000;
    double initial_step = 0.1;
    double tol = 1e-9;
    std::uint64_t seed = 0x5eedULL;
};

struct InnerResult {
    ScoreVector scores;
    double value = 0.0;
    bool converged = false;
};

namespace detail {

// Exact per-point infima over unconstrained scores (zero-sum scores for the
// constrained family). Derivations follow from first-order conditions; the
// test suite cross-checks every branch against the numeric minimizer.
inline std::optional<double> conditional_optimal_closed_form(const SurrogateSpec& spec,
                                                             const QVector& qv) {
    if (spec.constraint_over_classes_only) return std::nullopt;
    const auto& q = qv.q;
    const double Q = qv.normalizer;
    const double N = static_cast<double>(q.size());
    const double qmax = *std::max_element(q.begin(), q.end());
    switch (spec.family) {
        case LossFamily::comp_sum:
            switch (spec.variant) {
                case LossVariant::log: {
                    double v = 0.0;
                    for (double qy : q)
                        if (qy > 0.0) v += qy * std::log(Q / qy);
                    return v;
                }
                case LossVariant::exp: {
                    double root_sum = 0.0;
                    for (double qy : q) root_sum += std::sqrt(qy);
                    return root_sum * root_sum - Q;
                }
                case LossVariant::gce: {
                    if (spec.alpha > 1.0 - 1e-12) return Q - qmax; // mae limit
                    const double p = 1.0 / (1.0 - spec.alpha);
                    double z = 0.0;
                    for (double qy : q) z += std::pow(qy, p);
                    return (Q - std::pow(z, 1.0 - spec.alpha)) / spec.alpha;
                }
                case LossVariant::mae:
                    return Q - qmax;
                default:
                    return std::nullopt;
            }
        case LossFamily::sum:
            switch (spec.variant) {
                case LossVariant::exp: {
                    double root_sum = 0.0;
                    for (double qy : q) root_sum += std::sqrt(qy);
                    return root_sum * root_sum - Q;
                }
                case LossVariant::rho: {
                    // separated margins pay (rank-1) per label, sorted by mass
                    std::vector<double> sorted(q.begin(), q.end());
                    std::sort(sorted.begin(), sorted.end(), std::greater<>());
                    double v = 0.0;
                    for (std::size_t k = 1; k < sorted.size(); ++k)
                        v += static_cast<double>(k) * sorted[k];
                    return v;
                }
                default:
                    return std::nullopt; // sum-sq has no closed form
            }
        case LossFamily::constrained: {
            // weight of label y' in the conditional loss is Q - q(y')
            switch (spec.variant) {
                case LossVariant::hinge:
                    return N * (Q - qmax);
                case LossVariant::rho:
                    return Q - qmax;
                case LossVariant::sq: {
                    double inv_sum = 0.0;
                    for (double qy : q) {
                        const double w = Q - qy;
                        if (w <= 1e-300) return 0.0;
                        inv_sum += 1.0 / w;
                    }
                    return N * N / inv_sum;
                }
                case LossVariant::exp: {
                    double log_sum = 0.0;
                    for (double qy : q) {
                        const double w = Q - qy;
                        if (w <= 1e-300) return 0.0;
                        log_sum += std::log(w);
                    }
                    return N * std::exp(log_sum / N);
                }
                default:
                    return std::nullopt;
            }
        }
    }
    return std::nullopt;
}

inline void project_scores(const SurrogateSpec& spec, const HypothesisClassSpec& cls, int n_classes,
                           ScoreVector& s) {
    if (cls.is_bounded())
        for (auto& v : s) v = std::clamp(v, -cls.lambda, cls.lambda);
    if (spec.family == LossFamily::constrained)
        s = project_constraint(std::move(s),
                               spec.constraint_over_classes_only ? static_cast<std::size_t>(n_classes) : 0);
}

// Gaussian elimination with partial pivoting; dimensions stay tiny here.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        const double d = a[col][col];
        if (std::abs(d) < 1e-300) return {};
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / d;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double acc = b[r];
        for (std::size_t c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
        x[r] = acc / a[r][r];
    }
    return x;
}

// Newton polish for the sum-sq conditional risk (piecewise quadratic): once
// the active margin set settles, one solve lands on the exact optimum.
// Returns true when a stationary point is certified (projected gradient
// within 1e-10, or no further descent). The objective is translation
// invariant, so the unconstrained case keeps iterates mean-centered.
inline bool polish_sum_sq(const QVector& qv, const HypothesisClassSpec& cls, ScoreVector& s,
                          double& value) {
    const std::size_t n = s.size();
    const auto& q = qv.q;
    auto project = [&](ScoreVector v) {
        if (cls.is_bounded())
            for (auto& x : v) x = std::clamp(x, -cls.lambda, cls.lambda);
        else
            v = project_constraint(std::move(v)); // gauge only
        return v;
    };
    auto objective = [&](const ScoreVector& v) {
        double total = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (q[a] == 0.0) continue;
            for (std::size_t k = 0; k < n; ++k)
                if (k != a) total += q[a] * phi_sq(v[a] - v[k]);
        }
        return total;
    };
    s = project(std::move(s));
    value = objective(s);
    for (int iter = 0; iter < 120; ++iter) {
        std::vector<double> grad(n, 0.0);
        std::vector<std::vector<double>> hess(n, std::vector<double>(n, 0.0));
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t k = 0; k < n; ++k) {
                if (k == a) continue;
                const double d = s[a] - s[k];
                if (d >= 1.0) continue;
                const double g = -2.0 * (1.0 - d) * q[a];
                grad[a] += g;
                grad[k] -= g;
                const double h = 2.0 * q[a];
                hess[a][a] += h;
                hess[k][k] += h;
                hess[a][k] -= h;
                hess[k][a] -= h;
            }
        }
        double gnorm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double g = grad[i];
            if (cls.is_bounded()) { // drop components blocked by the box
                if (s[i] >= cls.lambda - 1e-12 && g < 0.0) g = 0.0;
                if (s[i] <= -cls.lambda + 1e-12 && g > 0.0) g = 0.0;
            }
            gnorm = std::max(gnorm, std::abs(g));
        }
        if (gnorm < 1e-10) return true;
        double ridge = 1e-10;
        for (std::size_t i = 0; i < n; ++i) ridge = std::max(ridge, 1e-12 * hess[i][i]);
        for (std::size_t i = 0; i < n; ++i) hess[i][i] += ridge;
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -grad[i];
        std::vector<double> delta = solve_linear(hess, rhs);
        if (delta.empty()) return false;
        double scale = 1.0;
        bool accepted = false;
        for (int tries = 0; tries < 50; ++tries) {
            ScoreVector cand = s;
            for (std::size_t i = 0; i < n; ++i) cand[i] += scale * delta[i];
            cand = project(std::move(cand));
            const double fc = objective(cand);
            if (fc <= value) {
                const bool stalled = value - fc < 1e-15;
                s = std::move(cand);
                value = fc;
                accepted = true;
                if (stalled && tries == 0) return true; // full step, no descent left
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) return true; // no descent direction improves: stationary
    }
    return false;
}

} // namespace detail

// Projected gradient descent over per-point scores with multi-start; the
// projection enforces the class box and/or the zero-sum constraint.
inline InnerResult minimize_conditional_numeric(const SurrogateSpec& spec, const QVector& qv,
                                                const HypothesisClassSpec& cls,
                                                const InnerOptions& opts = {}) {
    spec.validate();
    const std::size_t n = qv.q.size();
    const int n_classes = static_cast<int>(n); // scope bookkeeping only
    auto objective = [&](const ScoreVector& s) {
        return conditional_surrogate_value(spec, qv, s, n_classes);
    };
    auto gradient = [&](const ScoreVector& s, std::vector<double>& g) {
        g.assign(n, 0.0);
        for (std::size_t y = 0; y < n; ++y)
            if (qv.q[y] != 0.0) add_base_loss_gradient(spec, s, static_cast<Label>(y + 1), qv.q[y], g);
    };

    // stationarity measure: gradient with blocked box components dropped
    // and, for the constrained family, the scope mean removed
    auto projected_gradient_norm = [&](const ScoreVector& s, std::vector<double> g) {
        if (spec.family == LossFamily::constrained) {
            const std::size_t scope = spec.constraint_over_classes_only
                                          ? static_cast<std::size_t>(n_classes)
                                          : g.size();
            double mean = 0.0;
            for (std::size_t i = 0; i < scope; ++i) mean += g[i];
            mean /= static_cast<double>(scope);
            for (std::size_t i = 0; i < scope; ++i) g[i] -= mean;
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double gi = g[i];
            if (cls.is_bounded()) {
                if (s[i] >= cls.lambda - 1e-12 && gi < 0.0) gi = 0.0;
                if (s[i] <= -cls.lambda + 1e-12 && gi > 0.0) gi = 0.0;
            }
            norm = std::max(norm, std::abs(gi));
        }
        return norm;
    };

    Rng rng(opts.seed);
    InnerResult best;
    best.value = std::numeric_limits<double>::infinity();
    const double span = cls.is_bounded() ? cls.lambda : 3.0;
    std::vector<double> grad;
    for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
        ScoreVector s(n, 0.0);
        if (restart > 0)
            for (auto& v : s) v = rng.uniform(-span, span);
        detail::project_scores(spec, cls, n_classes, s);
        double f = objective(s);
        double step = opts.initial_step;
        bool converged = false;
        double window_f = f;
        for (int it = 0; it < opts.max_steps; ++it) {
            gradient(s, grad);
            if ((it & 31) == 0 && projected_gradient_norm(s, grad) < 1e-8) {
                converged = true;
                break;
            }
            ScoreVector cand = s;
            for (std::size_t i = 0; i < n; ++i) cand[i] -= step * grad[i];
            detail::project_scores(spec, cls, n_classes, cand);
            const double fc = objective(cand);
            if (fc < f) {
                s = std::move(cand);
                f = fc;
            } else {
                step *= 0.5;
                if (step < 1e-14) {
                    converged = true;
                    break;
                }
            }
            if ((it + 1) % 200 == 0) {
                if (window_f - f < opts.tol) {
                    converged = true;
                    break;
                }
                window_f = f;
            }
        }
        if (spec.family == LossFamily::sum && spec.variant == LossVariant::sq)
            converged = detail::polish_sum_sq(qv, cls, s, f) || converged;
        if (f < best.value) {
            best.value = f;
            best.scores = s;
            best.converged = converged;
        } else if (converged && f <= best.value + opts.tol) {
            best.converged = true;
        }
    }
    return best;
}

// Infimum of the conditional surrogate loss over the class at one point.
// Closed forms cover every unconstrained-score case except sum-sq, which
// gets a Newton-polished numeric solve; bounded classes are always numeric.
inline InnerResult conditional_optimal(const SurrogateSpec& spec, const QVector& qv,
                                       const HypothesisClassSpec& cls, const InnerOptions& opts = {}) {
    if (!cls.is_bounded()) {
        if (auto closed = detail::conditional_optimal_closed_form(spec, qv)) {
            InnerResult out;
            out.value = *closed;
            out.converged = true;
            return out;
        }
        if (spec.family == LossFamily::sum && spec.variant == LossVariant::sq) {
            InnerOptions tuned = opts;
            tuned.restarts = std::min(opts.restarts, 4); // convex objective
            return minimize_conditional_numeric(spec, qv, cls, tuned);
        }
    }
    return minimize_conditional_numeric(spec, qv, cls, opts);
}

// Conditional surrogate loss, per-point class optimum, and their gap.
inline ConditionalRegret conditional_surrogate(const SurrogateSpec& spec, const QVector& qv,
                                               const ScoreVector& s, const HypothesisClassSpec& cls,
                                               const InnerOptions& opts = {}) {
    ConditionalRegret out;
    out.loss = conditional_surrogate_value(spec, qv, s, static_cast<int>(s.size()));
    InnerResult inner = conditional_optimal(spec, qv, cls, opts);
    if (!inner.converged)
        throw optimization_error("conditional_surrogate: inner minimization did not converge",
                                 inner.value);
    // the evaluated hypothesis is itself an upper bound on the class
    // infimum, so it can only tighten a numerically-found optimum
    out.optimal = std::min(inner.value, out.loss);
    out.regret = out.loss - out.optimal;
    return out;
}

// ---------------------------------------------------------------------------
// Expected losses, minimizability gaps, approximation errors
// ---------------------------------------------------------------------------

struct PointRegret {
    double deferral_loss = 0.0;
    double deferral_optimal = 0.0;
    double deferral_regret = 0.0;
    double surrogate_loss = 0.0;
    double surrogate_optimal = 0.0;
    double surrogate_regret = 0.0;
};

struct RegretReport {
    std::vector<PointRegret> per_point;
    double expected_deferral_regret = 0.0;
    double expected_surrogate_regret = 0.0;
    double e_def = 0.0, e_def_star = 0.0;
    double e_sur = 0.0, e_sur_star = 0.0;
    double m_def = 0.0, m_sur = 0.0; // minimizability gaps
    double a_def = 0.0, a_sur = 0.0; // approximation errors
};

// Aggregates the exact per-point quantities under the marginal weights. On
// finite support the shipped classes realize per-point optima, so the
// best-in-class loss is the weighted sum of per-point infima and the
// minimizability gaps come out (exactly) zero; approximation errors compare
// against the all-measurable infima.
inline RegretReport expected_losses(const SurrogateSpec& spec, const FiniteDistribution& dist,
                                    const ExpertPanel& panel, const std::vector<ScoreVector>& scores,
                                    const HypothesisClassSpec& cls, const InnerOptions& opts = {}) {
    dist.validate(1e-9);
    if (scores.size() != dist.size())
        throw config_error("expected_losses: need one score vector per point");
    RegretReport rep;
    double sur_star_all = 0.0;
    double def_star_all = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        const QVector q = build_q_vector(dist, panel, i);
        const double w = dist.points[i].weight;
        PointRegret pr;
        const ConditionalRegret cd = conditional_deferral(q, scores[i]);
        pr.deferral_loss = cd.loss;
        pr.deferral_optimal = cd.optimal;
        pr.deferral_regret = cd.regret;
        const ConditionalRegret cs = conditional_surrogate(spec, q, scores[i], cls, opts);
        pr.surrogate_loss = cs.loss;
        pr.surrogate_optimal = cs.optimal;
        pr.surrogate_regret = cs.regret;
        rep.per_point.push_back(pr);

        rep.e_def += w * pr.deferral_loss;
        rep.e_def_star += w * pr.deferral_optimal;
        rep.e_sur += w * pr.surrogate_loss;
        rep.e_sur_star += w * pr.surrogate_optimal;
        rep.expected_deferral_regret += w * pr.deferral_regret;
        rep.expected_surrogate_regret += w * pr.surrogate_regret;
        def_star_all += w * pr.deferral_optimal; // full reachable set for every class
        if (cls.is_bounded()) {
            const InnerResult all = conditional_optimal(spec, q, HypothesisClassSpec::all_measurable(), opts);
            sur_star_all += w * all.value;
        } else {
            sur_star_all += w * pr.surrogate_optimal;
        }
    }
    rep.m_def = 0.0; // E*(H) equals the expected pointwise infimum above
    rep.m_sur = 0.0;
    rep.a_def = std::max(0.0, rep.e_def_star - def_star_all);
    rep.a_sur = std::max(0.0, rep.e_sur_star - sur_star_all);
    return rep;
}

// ---------------------------------------------------------------------------
// Consistency-bound verification
// ---------------------------------------------------------------------------

struct BoundRecord {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    bool holds = false;
    double rhs_with_constants = 0.0; // cost-constant form, also kept for linear Gamma
    RegretReport report;
};

// lhs: deferral estimation error plus its minimizability gap. rhs: the
// Gamma transform of the surrogate counterpart with the cost-bound
// constants, dropped when Gamma is linear.
inline BoundRecord verify_bound(const SurrogateSpec& spec, const FiniteDistribution& dist,
                                const ExpertPanel& panel, const std::vector<ScoreVector>& scores,
                                const HypothesisClassSpec& cls, const InnerOptions& opts = {},
                                double slack_tolerance = 1e-9) {
    if (!panel.within_unit_interval())
        throw cost_bound_error(
            "verify_bound: declared cost bounds exceed [0,1]; apply rescaled_for_bounds() first "
            "(bound-verification cost mode)");
    if (cls.is_bounded())
        throw config_error(
            "verify_bound: the shipped Gamma transforms are certified for the all_measurable "
            "class; a tight score box changes the base loss's consistency constants (e.g. the "
            "rho-margin constrained loss with lambda <= (n+n_e-1)*rho)");
    const LabelSpace space{dist.n, panel.size()};
    BoundRecord rec;
    rec.report = expected_losses(spec, dist, panel, scores, cls, opts);
    rec.lhs = rec.report.e_def - rec.report.e_def_star + rec.report.m_def;
    const double eps = std::max(0.0, rec.report.e_sur - rec.report.e_sur_star + rec.report.m_sur);
    const GammaTransform gamma = gamma_of(spec, space);
    const double outer = space.n_e + 1 - panel.sum_lower();
    const double inner = space.n_e + 1 - panel.sum_upper();
    rec.rhs_with_constants = outer * gamma(eps / inner);
    rec.rhs = gamma.removes_constants ? gamma(eps) : rec.rhs_with_constants;
    rec.slack = rec.rhs - rec.lhs;
    rec.holds = rec.lhs <= rec.rhs + slack_tolerance;
    return rec;
}

// ---------------------------------------------------------------------------
// Closed-form gap example (binary exponential margin loss, bounded class)
// ---------------------------------------------------------------------------

// Difference between approximation error and minimizability gap for the
// exponential margin loss with scores bounded by lambda: the clamped
// log-odds minimizer against the unconstrained one. Equals e^{-lambda} in
// the deterministic case.
inline double binary_exp_gap(double eta, double lambda) {
    if (eta < 0.0 || eta > 1.0) throw domain_error("binary_exp_gap: eta must lie in [0,1]");
    if (!(lambda > 0.0)) throw domain_error("binary_exp_gap: lambda must be positive");
    auto risk = [&](double h) { return eta * std::exp(-h) + (1.0 - eta) * std::exp(h); };
    double h_star = 0.0;
    if (eta <= 0.0) h_star = -lambda;
    else if (eta >= 1.0) h_star = lambda;
    else h_star = std::clamp(0.5 * std::log(eta / (1.0 - eta)), -lambda, lambda);
    const double bayes = 2.0 * std::sqrt(eta * (1.0 - eta));
    return risk(h_star) - bayes;
}

// Independent numeric route: one-dimensional convex minimization on both
// the bounded and (effectively) unbounded intervals.
inline double binary_exp_gap_numeric(double eta, double lambda) {
    if (eta < 0.0 || eta > 1.0) throw domain_error("binary_exp_gap_numeric: eta must lie in [0,1]");
    if (!(lambda > 0.0)) throw domain_error("binary_exp_gap_numeric: lambda must be positive");
    auto risk = [&](double h) { return eta * std::exp(-h) + (1.0 - eta) * std::exp(h); };
    auto minimize = [&](double lo, double hi) {
        for (int it = 0; it < 300 && hi - lo > 1e-14; ++it) {
            const double a = lo + (hi - lo) / 3.0;
            const double b = hi - (hi - lo) / 3.0;
            if (risk(a) <= risk(b)) hi = b;
            else lo = a;
        }
        return risk(0.5 * (lo + hi));
    };
    const double wide = std::max(lambda, 40.0);
    return minimize(-lambda, lambda) - minimize(-wide, wide);
}

// ---------------------------------------------------------------------------
// Learning bound (finite-sample)
// ---------------------------------------------------------------------------

struct BoundConstants {
    int n_e = 1;
    double sum_lower = 0.0; // sum of declared expert lower bounds
    double sum_upper = 0.0;
};

// Right-hand side of the finite-sample deferral bound: the Gamma transform
// of 4*Rademacher + 2*B*sqrt(log(2/delta)/(2m)) + M_L, with cost constants
// kept (dropped for linear Gamma).
inline double learning_bound_rhs(const GammaTransform& gamma, double rademacher, double b_L,
                                 long m, double delta, double m_sur, const BoundConstants& costs) {
    if (!(delta > 0.0 && delta < 1.0)) throw domain_error("learning_bound_rhs: delta must be in (0,1)");
    if (m < 1) throw domain_error("learning_bound_rhs: m must be >= 1");
    const double inner_sum = std::max(
        0.0, 4.0 * rademacher + 2.0 * b_L * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(m))) +
                 m_sur);
    if (gamma.removes_constants) return gamma(inner_sum);
    const double outer = costs.n_e + 1 - costs.sum_lower;
    const double inner = costs.n_e + 1 - costs.sum_upper;
    return outer * gamma(inner_sum / inner);
}

// ---------------------------------------------------------------------------
// Empirical Rademacher complexity (Monte Carlo)
// ---------------------------------------------------------------------------

struct RademacherModelClass {
    ModelClassKind arch = ModelClassKind::mlp2;
    int input_dim = 2;
    int hidden_dim = 64;
    int output_dim = 3;
    double weight_norm_bound = 10.0; // L2 ball keeping the supremum finite
};

struct RademacherOptions {
    int restarts = 10;
    int epochs = 25;
    int batch_size = 256;
    double learning_rate = 0.05;
};

struct RademacherEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    bool improved = false; // false when no ascent start beat its initialization
};

// Per trial: draw signs, maximize the sign-weighted mean surrogate loss
// over the model class by (projected) gradient ascent with multi-start, and
// average the suprema. A lower bound of the true supremum by construction.
inline RademacherEstimate estimate_rademacher(const SurrogateSpec& spec, const TrainingSet& sample,
                                              const RademacherModelClass& model_class, int trials,
                                              std::uint64_t seed, const RademacherOptions& opts = {}) {
    if (sample.empty()) throw config_error("estimate_rademacher: empty sample");
    if (trials < 1) throw config_error("estimate_rademacher: trials must be >= 1");
    const LabelSpace space{model_class.output_dim - static_cast<int>(sample.front().expert_costs.size()),
                           static_cast<int>(sample.front().expert_costs.size())};
    space.validate();
    const double m = static_cast<double>(sample.size());

    auto weighted_mean = [&](const ScoreModel& model, const std::vector<double>& sigma) {
        ScoreVector scores;
        std::vector<double> hidden;
        double total = 0.0;
        for (std::size_t i = 0; i < sample.size(); ++i) {
            model.forward(sample[i].features, scores, hidden);
            total += sigma[i] * surrogate_loss(spec, scores, sample[i].label, space,
                                               sample[i].expert_costs);
        }
        return total / m;
    };

    TrainConfig ascent_cfg;
    ascent_cfg.spec = spec;
    ascent_cfg.constraint_projection = spec.family == LossFamily::constrained;
    ascent_cfg.epochs = opts.epochs;
    ascent_cfg.batch_size = opts.batch_size;
    ascent_cfg.learning_rate = opts.learning_rate;
    ascent_cfg.optimizer = OptimizerKind::adam;
    ascent_cfg.weight_decay = 0.0;

    std::vector<double> per_trial;
    bool improved = false;
    for (int trial = 0; trial < trials; ++trial) {
        Rng sign_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(trial)));
        std::vector<double> sigma(sample.size());
        for (auto& s : sigma) s = sign_rng.u01() < 0.5 ? -1.0 : 1.0;
        std::vector<double> neg_sigma(sigma.size());
        for (std::size_t i = 0; i < sigma.size(); ++i) neg_sigma[i] = -sigma[i];

        double best = -std::numeric_limits<double>::infinity();
        for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
            ScoreModel init = ScoreModel::init(model_class.arch, model_class.input_dim,
                                               model_class.hidden_dim, model_class.output_dim,
                                               derive_seed(seed, 5000 + static_cast<std::uint64_t>(restart)));
            const double at_init = weighted_mean(init, sigma);
            double value = at_init;
            if (opts.epochs > 0) {
                ascent_cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(trial) * 64 +
                                                        static_cast<std::uint64_t>(restart));
                ascent_cfg.max_param_norm = model_class.weight_norm_bound;
                TrainResult res = train_weighted(init, sample, neg_sigma, ascent_cfg);
                value = std::max(at_init, weighted_mean(res.model, sigma));
            }
            if (value > at_init + 1e-12) improved = true;
            best = std::max(best, value);
        }
        per_trial.push_back(best);
    }
    RademacherEstimate out;
    out.improved = improved || opts.epochs == 0;
    for (double v : per_trial) out.estimate += v;
    out.estimate /= static_cast<double>(per_trial.size());
    if (per_trial.size() > 1) {
        double var = 0.0;
        for (double v : per_trial) var += (v - out.estimate) * (v - out.estimate);
        var /= static_cast<double>(per_trial.size() - 1);
        out.std_error = std::sqrt(var / static_cast<double>(per_trial.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Random instances and the bound sweep
// ---------------------------------------------------------------------------

struct RandomInstanceOptions {
    int min_points = 1, max_points = 5;
    int min_classes = 2, max_classes = 3;
    int min_experts = 1, max_experts = 2;
    double prediction_expert_prob = 0.3; // else a free cost table in [0,1]
};

inline DeferralInstance random_instance(Rng& rng, const RandomInstanceOptions& opts = {}) {
    DeferralInstance inst;
    const int n = rng.uniform_int(opts.min_classes, opts.max_classes);
    const int n_e = rng.uniform_int(opts.min_experts, opts.max_experts);
    const int m = rng.uniform_int(opts.min_points, opts.max_points);
    inst.dist.n = n;
    auto weights = rng.simplex(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        DistPoint p;
        p.id = "p" + std::to_string(i);
        p.features = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
        p.weight = weights[static_cast<std::size_t>(i)];
        p.conditional = rng.simplex(static_cast<std::size_t>(n));
        inst.dist.points.push_back(std::move(p));
    }
    for (int j = 0; j < n_e; ++j) {
        Expert e;
        if (rng.u01() < opts.prediction_expert_prob) {
            e.kind = CostKind::misclassification;
            for (int i = 0; i < m; ++i)
                e.predictions.push_back(static_cast<Label>(1 + rng.below(static_cast<std::uint64_t>(n))));
        } else {
            e.kind = CostKind::table;
            for (int i = 0; i < m; ++i) {
                std::vector<double> row(static_cast<std::size_t>(n));
                for (auto& c : row) c = rng.u01();
                e.cost_table.push_back(std::move(row));
            }
        }
        // declared bounds: exact extrema over the support
        double lo = 1.0, hi = 0.0;
        e.lower_bound = 0.0;
        e.upper_bound = 1.0;
        for (int i = 0; i < m; ++i)
            for (int y = 1; y <= n; ++y) {
                const double c = e.cost(static_cast<std::size_t>(i), y);
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
        e.lower_bound = lo;
        e.upper_bound = hi;
        inst.panel.experts.push_back(std::move(e));
    }
    return inst;
}

// Hypothesis for a sweep row: independent per-point scores, occasionally
// centered near the log of the normalized q-vector so low-regret regions
// get exercised; projected for constrained specs.
inline std::vector<ScoreVector> random_score_map(Rng& rng, const DeferralInstance& inst,
                                                 const SurrogateSpec& spec,
                                                 const HypothesisClassSpec& cls,
                                                 double near_optimal_prob = 0.2) {
    std::vector<ScoreVector> out;
    const int total = inst.space().total();
    for (std::size_t i = 0; i < inst.dist.size(); ++i) {
        ScoreVector s(static_cast<std::size_t>(total));
        if (rng.u01() < near_optimal_prob) {
            const QVector q = build_q_vector(inst, i);
            for (int k = 0; k < total; ++k)
                s[static_cast<std::size_t>(k)] =
                    std::log(q.q_bar[static_cast<std::size_t>(k)] + 1e-3) + 0.01 * rng.normal();
        } else {
            for (auto& v : s) v = rng.uniform(-4.0, 4.0);
        }
        detail::project_scores(spec, cls, inst.dist.n, s);
        out.push_back(std::move(s));
    }
    return out;
}

struct SweepRow {
    std::uint64_t seed = 0;
    std::string spec;
    std::string cls;
    double lhs = 0.0, rhs = 0.0, slack = 0.0;
    bool holds = false;
    double rhs_with_constants = 0.0;
    double m_sur = 0.0, a_sur = 0.0, m_def = 0.0;
};

// One row per (distribution seed, spec): fresh random instance, cost panel
// and hypothesis, then the bound check. Rows are computed in a small work
// pool with per-row derived seeds and reported in deterministic order.
inline std::vector<SweepRow> run_bound_sweep(const std::vector<SurrogateSpec>& specs, int num_seeds,
                                             const HypothesisClassSpec& cls, std::uint64_t root_seed,
                                             int jobs = 1, const RandomInstanceOptions& inst_opts = {},
                                             const InnerOptions& inner = {}) {
    std::vector<SweepRow> rows(static_cast<std::size_t>(num_seeds) * specs.size());
    if (rows.empty()) return rows;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto body = [&]() {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= rows.size()) return;
            const std::size_t seed_idx = r / specs.size();
            const std::size_t spec_idx = r % specs.size();
            const SurrogateSpec& spec = specs[spec_idx];
            Rng inst_rng(derive_seed(root_seed, seed_idx));
            DeferralInstance inst = random_instance(inst_rng, inst_opts);
            Rng h_rng(derive_seed(root_seed, 0xABCD0000ULL + seed_idx * 64 + spec_idx));
            const auto scores = random_score_map(h_rng, inst, spec, cls);
            InnerOptions row_inner = inner;
            row_inner.seed = derive_seed(root_seed, 0x5EED0000ULL + r);
            const BoundRecord rec = verify_bound(spec, inst.dist, inst.panel, scores, cls, row_inner);
            SweepRow& row = rows[r];
            row.seed = seed_idx;
            row.spec = spec.token();
            row.cls = cls.name();
            row.lhs = rec.lhs;
            row.rhs = rec.rhs;
            row.slack = rec.slack;
            row.holds = rec.holds;
            row.rhs_with_constants = rec.rhs_with_constants;
            row.m_sur = rec.report.m_sur;
            row.a_sur = rec.report.a_sur;
            row.m_def = rec.report.m_def;
        }
    };
    auto worker = [&]() {
        try {
            body();
        } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(rows.size()); // drain remaining rows
        }
    };
    const int workers = std::max(1, jobs);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return rows;
}

} // namespace l2d
