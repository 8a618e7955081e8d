#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"

namespace l2d {

enum class LossFamily { comp_sum, sum, constrained };
enum class LossVariant { exp, log, gce, mae, sq, rho, hinge };

// Which multiclass base loss drives the deferral surrogate, plus its
// parameters. Eleven canonical instantiations are shipped (all_specs()).
struct SurrogateSpec {
    LossFamily family = LossFamily::comp_sum;
    LossVariant variant = LossVariant::log;
    double alpha = 0.7; // gce only
    double rho = 1.0;   // rho variants only
    // Scope of the constrained family's zero-sum requirement: the full
    // augmented label set by default, optionally the class labels only.
    bool constraint_over_classes_only = false;

    void validate() const;
    std::string token() const;
    static SurrogateSpec parse(std::string_view token);

    bool is_rho_variant() const { return variant == LossVariant::rho; }
    bool is_convex() const {
        if (family == LossFamily::comp_sum)
            return variant == LossVariant::log || variant == LossVariant::exp;
        return variant != LossVariant::rho;
    }
};

inline void SurrogateSpec::validate() const {
    auto bad = [&](const char* why) { throw config_error(std::string("SurrogateSpec: ") + why); };
    switch (family) {
        case LossFamily::comp_sum:
            if (variant != LossVariant::exp && variant != LossVariant::log &&
                variant != LossVariant::gce && variant != LossVariant::mae)
                bad("comp_sum variant must be one of exp, log, gce, mae");
            break;
        case LossFamily::sum:
            if (variant != LossVariant::sq && variant != LossVariant::exp && variant != LossVariant::rho)
                bad("sum variant must be one of sq, exp, rho");
            break;
        case LossFamily::constrained:
            if (variant != LossVariant::hinge && variant != LossVariant::sq &&
                variant != LossVariant::exp && variant != LossVariant::rho)
                bad("constrained variant must be one of hinge, sq, exp, rho");
            break;
    }
    if (variant == LossVariant::gce && !(alpha > 0.0 && alpha <= 1.0))
        bad("gce alpha must lie in (0, 1]");
    if (variant == LossVariant::rho && !(rho > 0.0)) bad("rho must be positive");
    if (constraint_over_classes_only && family != LossFamily::constrained)
        bad("constraint scope applies to the constrained family only");
}

namespace detail {

inline std::string family_name(LossFamily f) {
    switch (f) {
        case LossFamily::comp_sum: return "comp_sum";
        case LossFamily::sum: return "sum";
        case LossFamily::constrained: return "constrained";
    }
    return "?";
}

inline std::string variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::exp: return "exp";
        case LossVariant::log: return "log";
        case LossVariant::gce: return "gce";
        case LossVariant::mae: return "mae";
        case LossVariant::sq: return "sq";
        case LossVariant::rho: return "rho";
        case LossVariant::hinge: return "hinge";
    }
    return "?";
}

inline std::string format_param(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Exponent clamp keeping exponential-margin sums finite for large score
// gaps; sets the flag when it fires.
constexpr double kExpClamp = 30.0;

inline double clamped_exp(double t, bool* clamped = nullptr) {
    if (t > kExpClamp) {
        if (clamped) *clamped = true;
        t = kExpClamp;
    } else if (t < -kExpClamp) {
        if (clamped) *clamped = true;
        t = -kExpClamp;
    }
    return std::exp(t);
}

inline bool exp_in_range(double t) { return t > -kExpClamp && t < kExpClamp; }

// max-subtracted softmax
inline void softmax(const ScoreVector& s, std::vector<double>& out) {
    const double m = *std::max_element(s.begin(), s.end());
    out.resize(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out[i] = std::exp(s[i] - m);
        z += out[i];
    }
    for (auto& v : out) v /= z;
}

inline double log_sum_exp(const ScoreVector& s) {
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - m);
    return m + std::log(z);
}

// Phi_sq(t) = max(0, 1-t)^2
inline double phi_sq(double t) {
    const double u = std::max(0.0, 1.0 - t);
    return u * u;
}
inline double phi_sq_deriv(double t) { return t < 1.0 ? -2.0 * (1.0 - t) : 0.0; }

// Phi_hinge(t) = max(0, 1-t); right-derivative at the kink
inline double phi_hinge(double t) { return std::max(0.0, 1.0 - t); }
inline double phi_hinge_deriv(double t) { return t < 1.0 ? -1.0 : 0.0; }

// Phi_rho(t) = min(max(0, 1 - t/rho), 1); right-derivative at both kinks
inline double phi_rho(double t, double rho) {
    return std::min(std::max(0.0, 1.0 - t / rho), 1.0);
}
inline double phi_rho_deriv(double t, double rho) {
    return (t >= 0.0 && t < rho) ? -1.0 / rho : 0.0;
}

inline void check_constraint(const SurrogateSpec& spec, const ScoreVector& s, int n_classes) {
    if (spec.family != LossFamily::constrained) return;
    const std::size_t scope = spec.constraint_over_classes_only
                                  ? static_cast<std::size_t>(n_classes)
                                  : s.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < scope && i < s.size(); ++i) sum += s[i];
    if (std::abs(sum) > 1e-6)
        throw constraint_error("constrained loss requires zero-sum scores (sum = " + std::to_string(sum) + ")");
}

} // namespace detail

inline std::string SurrogateSpec::token() const {
    std::string t = detail::family_name(family) + ":" + detail::variant_name(variant);
    std::vector<std::string> params;
    if (variant == LossVariant::gce) params.push_back("alpha=" + detail::format_param(alpha));
    if (variant == LossVariant::rho) params.push_back("rho=" + detail::format_param(rho));
    if (constraint_over_classes_only) params.push_back("scope=classes");
    if (!params.empty()) {
        t += "(" + params[0];
        for (std::size_t i = 1; i < params.size(); ++i) t += "," + params[i];
        t += ")";
    }
    return t;
}

inline SurrogateSpec SurrogateSpec::parse(std::string_view token) {
    static constexpr const char* kValid =
        "comp_sum:{exp,log,gce(alpha=a),mae}, sum:{sq,exp,rho(rho=r)}, "
        "constrained:{hinge,sq,exp,rho(rho=r)}[(scope=classes)]";
    auto fail = [&](const std::string& why) {
        throw config_error("cannot parse surrogate spec '" + std::string(token) + "': " + why +
                           "; valid tokens: " + kValid);
    };
    SurrogateSpec spec;
    std::string_view rest = token;
    std::string_view params;
    if (auto open = rest.find('('); open != std::string_view::npos) {
        if (rest.back() != ')') fail("unbalanced parentheses");
        params = rest.substr(open + 1, rest.size() - open - 2);
        rest = rest.substr(0, open);
    }
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) fail("expected family:variant");
    const std::string_view family = rest.substr(0, colon);
    const std::string_view variant = rest.substr(colon + 1);

    if (family == "comp_sum") spec.family = LossFamily::comp_sum;
    else if (family == "sum") spec.family = LossFamily::sum;
    else if (family == "constrained") spec.family = LossFamily::constrained;
    else fail("unknown family '" + std::string(family) + "'");

    if (variant == "exp") spec.variant = LossVariant::exp;
    else if (variant == "log") spec.variant = LossVariant::log;
    else if (variant == "gce") spec.variant = LossVariant::gce;
    else if (variant == "mae") spec.variant = LossVariant::mae;
    else if (variant == "sq") spec.variant = LossVariant::sq;
    else if (variant == "rho") spec.variant = LossVariant::rho;
    else if (variant == "hinge") spec.variant = LossVariant::hinge;
    else fail("unknown variant '" + std::string(variant) + "'");

    while (!params.empty()) {
        auto comma = params.find(',');
        std::string_view kv = params.substr(0, comma);
        params = comma == std::string_view::npos ? std::string_view{} : params.substr(comma + 1);
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) fail("expected key=value parameter");
        const std::string_view key = kv.substr(0, eq);
        const std::string value(kv.substr(eq + 1));
        if (key == "alpha") spec.alpha = std::stod(value);
        else if (key == "rho") spec.rho = std::stod(value);
        else if (key == "scope") {
            if (value == "classes") spec.constraint_over_classes_only = true;
            else if (value == "augmented") spec.constraint_over_classes_only = false;
            else fail("scope must be 'augmented' or 'classes'");
        } else fail("unknown parameter '" + std::string(key) + "'");
    }
    try {
        spec.validate();
    } catch (const config_error& e) {
        fail(e.what());
    }
    return spec;
}

// The eleven table rows, with default parameters.
inline std::vector<SurrogateSpec> all_specs() {
    std::vector<SurrogateSpec> out;
    for (auto v : {LossVariant::exp, LossVariant::log, LossVariant::gce, LossVariant::mae})
        out.push_back(SurrogateSpec{LossFamily::comp_sum, v});
    for (auto v : {LossVariant::sq, LossVariant::exp, LossVariant::rho})
        out.push_back(SurrogateSpec{LossFamily::sum, v});
    for (auto v : {LossVariant::hinge, LossVariant::sq, LossVariant::exp, LossVariant::rho})
        out.push_back(SurrogateSpec{LossFamily::constrained, v});
    return out;
}

struct LossDiagnostics {
    bool exp_clamped = false;
};

// Multiclass base loss over the augmented label set, per the chosen family:
// comp-sum variants compose with the softmax, sum variants penalize pairwise
// margins, constrained variants penalize the other labels' raw scores under
// a zero-sum constraint. `y` is a 1-based augmented label. `n_classes` is
// only consulted for the classes-scoped constraint check.
inline double base_loss(const SurrogateSpec& spec, const ScoreVector& s, Label y,
                        int n_classes = 0, LossDiagnostics* diag = nullptr) {
    if (y < 1 || static_cast<std::size_t>(y) > s.size())
        throw invalid_label_error("base_loss: label " + std::to_string(y) + " out of range");
    check_finite_scores(s);
    detail::check_constraint(spec, s, n_classes);
    const std::size_t a = static_cast<std::size_t>(y - 1);
    bool clamped = false;
    double loss = 0.0;
    switch (spec.family) {
        case LossFamily::comp_sum: {
            switch (spec.variant) {
                case LossVariant::log:
                    loss = detail::log_sum_exp(s) - s[a];
                    break;
                case LossVariant::exp:
                    for (std::size_t k = 0; k < s.size(); ++k)
                        if (k != a) loss += detail::clamped_exp(s[k] - s[a], &clamped);
                    break;
                case LossVariant::gce: {
                    std::vector<double> sm;
                    detail::softmax(s, sm);
                    loss = (1.0 - std::pow(sm[a], spec.alpha)) / spec.alpha;
                    break;
                }
                case LossVariant::mae: {
                    std::vector<double> sm;
                    detail::softmax(s, sm);
                    loss = 1.0 - sm[a];
                    break;
                }
                default:
                    throw config_error("invalid comp_sum variant");
            }
            break;
        }
        case LossFamily::sum: {
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (k == a) continue;
                const double margin = s[a] - s[k];
                switch (spec.variant) {
                    case LossVariant::sq: loss += detail::phi_sq(margin); break;
                    case LossVariant::exp: loss += detail::clamped_exp(-margin, &clamped); break;
                    case LossVariant::rho: loss += detail::phi_rho(margin, spec.rho); break;
                    default: throw config_error("invalid sum variant");
                }
            }
            break;
        }
        case LossFamily::constrained: {
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (k == a) continue;
                const double t = -s[k];
                switch (spec.variant) {
                    case LossVariant::hinge: loss += detail::phi_hinge(t); break;
                    case LossVariant::sq: loss += detail::phi_sq(t); break;
                    case LossVariant::exp: loss += detail::clamped_exp(-t, &clamped); break;
                    case LossVariant::rho: loss += detail::phi_rho(t, spec.rho); break;
                    default: throw config_error("invalid constrained variant");
                }
            }
            break;
        }
    }
    if (diag) diag->exp_clamped = clamped;
    return loss;
}

// Adds weight * d(base_loss)/ds into grad. Kinks use the documented
// right-derivative subgradients; clamped exponentials contribute zero slope.
inline void add_base_loss_gradient(const SurrogateSpec& spec, const ScoreVector& s, Label y,
                                   double weight, std::vector<double>& grad) {
    if (y < 1 || static_cast<std::size_t>(y) > s.size())
        throw invalid_label_error("base_loss gradient: label out of range");
    const std::size_t a = static_cast<std::size_t>(y - 1);
    grad.resize(s.size(), 0.0);
    switch (spec.family) {
        case LossFamily::comp_sum: {
            std::vector<double> sm;
            detail::softmax(s, sm);
            double factor = 0.0;
            switch (spec.variant) {
                case LossVariant::log:
                    factor = 1.0;
                    break;
                case LossVariant::exp: {
                    // direct clamped-margin derivative; does not route through softmax
                    double diag_sum = 0.0;
                    for (std::size_t k = 0; k < s.size(); ++k) {
                        if (k == a) continue;
                        const double t = s[k] - s[a];
                        const double e = detail::clamped_exp(t);
                        const double slope = detail::exp_in_range(t) ? e : 0.0;
                        grad[k] += weight * slope;
                        diag_sum += slope;
                    }
                    grad[a] -= weight * diag_sum;
                    return;
                }
                case LossVariant::gce:
                    factor = std::pow(sm[a], spec.alpha);
                    break;
                case LossVariant::mae:
                    factor = sm[a];
                    break;
                default:
                    throw config_error("invalid comp_sum variant");
            }
            for (std::size_t k = 0; k < s.size(); ++k) grad[k] += weight * factor * sm[k];
            grad[a] -= weight * factor;
            return;
        }
        case LossFamily::sum: {
            double at_target = 0.0;
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (k == a) continue;
                const double margin = s[a] - s[k];
                double d = 0.0;
                switch (spec.variant) {
                    case LossVariant::sq: d = detail::phi_sq_deriv(margin); break;
                    case LossVariant::exp: {
                        const double e = detail::clamped_exp(-margin);
                        d = detail::exp_in_range(-margin) ? -e : 0.0;
                        break;
                    }
                    case LossVariant::rho: d = detail::phi_rho_deriv(margin, spec.rho); break;
                    default: throw config_error("invalid sum variant");
                }
                at_target += d;
                grad[k] -= weight * d;
            }
            grad[a] += weight * at_target;
            return;
        }
        case LossFamily::constrained: {
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (k == a) continue;
                const double t = -s[k];
                double d = 0.0;
                switch (spec.variant) {
                    case LossVariant::hinge: d = detail::phi_hinge_deriv(t); break;
                    case LossVariant::sq: d = detail::phi_sq_deriv(t); break;
                    case LossVariant::exp: {
                        const double e = detail::clamped_exp(-t);
                        d = detail::exp_in_range(-t) ? -e : 0.0;
                        break;
                    }
                    case LossVariant::rho: d = detail::phi_rho_deriv(t, spec.rho); break;
                    default: throw config_error("invalid constrained variant");
                }
                grad[k] -= weight * d;
            }
            return;
        }
    }
}

inline ScoreVector base_loss_gradient(const SurrogateSpec& spec, const ScoreVector& s, Label y) {
    std::vector<double> grad(s.size(), 0.0);
    add_base_loss_gradient(spec, s, y, 1.0, grad);
    return grad;
}

// Target deferral loss: zero-one error when predicting a class, the chosen
// expert's cost when deferring. expert_costs_at_y[j] = c_{j+1}(x, y).
inline double deferral_loss(const ScoreVector& s, Label y, const LabelSpace& space,
                            std::span<const double> expert_costs_at_y) {
    if (!space.is_class_label(y))
        throw invalid_label_error("deferral_loss: true label must be a class label");
    if (static_cast<int>(s.size()) != space.total())
        throw invalid_score_error("deferral_loss: score length != n + n_e");
    if (static_cast<int>(expert_costs_at_y.size()) != space.n_e)
        throw config_error("deferral_loss: need one cost per expert");
    const Label pred = predict_label(s);
    if (space.is_class_label(pred)) return pred == y ? 0.0 : 1.0;
    return expert_costs_at_y[static_cast<std::size_t>(space.expert_of(pred) - 1)];
}

inline double deferral_loss(const ScoreVector& s, Label y, const FiniteDistribution& d,
                            const ExpertPanel& panel, std::size_t point) {
    std::vector<double> costs(static_cast<std::size_t>(panel.size()));
    for (int j = 0; j < panel.size(); ++j)
        costs[static_cast<std::size_t>(j)] = panel.experts[static_cast<std::size_t>(j)].cost(point, y);
    return deferral_loss(s, y, LabelSpace{d.n, panel.size()}, costs);
}

// The deferral surrogate: base loss at the true class plus cost-complement
// weighted base losses at each expert label.
inline double surrogate_loss(const SurrogateSpec& spec, const ScoreVector& s, Label y,
                             const LabelSpace& space, std::span<const double> expert_costs_at_y,
                             LossDiagnostics* diag = nullptr) {
    if (!space.is_class_label(y))
        throw invalid_label_error("surrogate_loss: true label must be a class label");
    if (static_cast<int>(expert_costs_at_y.size()) != space.n_e)
        throw config_error("surrogate_loss: need one cost per expert");
    double total = base_loss(spec, s, y, space.n, diag);
    for (int j = 1; j <= space.n_e; ++j) {
        const double w = 1.0 - expert_costs_at_y[static_cast<std::size_t>(j - 1)];
        if (w == 0.0) continue;
        LossDiagnostics local;
        total += w * base_loss(spec, s, space.n + j, space.n, &local);
        if (diag) diag->exp_clamped = diag->exp_clamped || local.exp_clamped;
    }
    return total;
}

inline double surrogate_loss(const SurrogateSpec& spec, const ScoreVector& s, Label y,
                             const FiniteDistribution& d, const ExpertPanel& panel, std::size_t point) {
    std::vector<double> costs(static_cast<std::size_t>(panel.size()));
    for (int j = 0; j < panel.size(); ++j)
        costs[static_cast<std::size_t>(j)] = panel.experts[static_cast<std::size_t>(j)].cost(point, y);
    return surrogate_loss(spec, s, y, LabelSpace{d.n, panel.size()}, costs);
}

inline ScoreVector surrogate_gradient(const SurrogateSpec& spec, const ScoreVector& s, Label y,
                                      const LabelSpace& space, std::span<const double> expert_costs_at_y) {
    if (!space.is_class_label(y))
        throw invalid_label_error("surrogate_gradient: true label must be a class label");
    if (static_cast<int>(expert_costs_at_y.size()) != space.n_e)
        throw config_error("surrogate_gradient: need one cost per expert");
    check_finite_scores(s);
    detail::check_constraint(spec, s, space.n);
    std::vector<double> grad(s.size(), 0.0);
    add_base_loss_gradient(spec, s, y, 1.0, grad);
    for (int j = 1; j <= space.n_e; ++j) {
        const double w = 1.0 - expert_costs_at_y[static_cast<std::size_t>(j - 1)];
        if (w != 0.0) add_base_loss_gradient(spec, s, space.n + j, w, grad);
    }
    return grad;
}

// Mean removal over the constrained scope; idempotent.
inline ScoreVector project_constraint(ScoreVector s, std::size_t scope = 0) {
    check_finite_scores(s);
    const std::size_t k = (scope == 0 || scope > s.size()) ? s.size() : scope;
    if (k == 0) return s;
    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean += s[i];
    mean /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) s[i] -= mean;
    return s;
}

enum class GammaShape { linear, sqrt };

// The concave transform mediating the consistency bound: Gamma(t) equals
// coefficient * t (linear) or coefficient * sqrt(t) (sqrt). Outer and inner
// cost constants are dropped exactly when the shape is linear.
struct GammaTransform {
    GammaShape shape = GammaShape::sqrt;
    double coefficient = 1.0;
    bool removes_constants = false;

    double operator()(double t) const {
        if (t < 0.0) throw domain_error("Gamma transform requires a nonnegative argument");
        return shape == GammaShape::linear ? coefficient * t : coefficient * std::sqrt(t);
    }
};

inline GammaTransform gamma_of(const SurrogateSpec& spec, const LabelSpace& space) {
    spec.validate();
    GammaTransform g;
    // The base loss acts on the augmented label set, so the label-count
    // dependent coefficients (gce, mae) use n + n_e. The n-coefficient form
    // admits counterexamples in the deferral problem (checked in tests).
    const double labels = static_cast<double>(space.total());
    switch (spec.family) {
        case LossFamily::comp_sum:
            switch (spec.variant) {
                case LossVariant::exp:
                case LossVariant::log:
                    g = {GammaShape::sqrt, std::sqrt(2.0), false};
                    break;
                case LossVariant::gce:
                    g = {GammaShape::sqrt, std::sqrt(2.0 * std::pow(labels, spec.alpha)), false};
                    break;
                case LossVariant::mae:
                    g = {GammaShape::linear, labels, true};
                    break;
                default: break;
            }
            break;
        case LossFamily::sum:
            switch (spec.variant) {
                case LossVariant::sq: g = {GammaShape::sqrt, 1.0, false}; break;
                case LossVariant::exp: g = {GammaShape::sqrt, std::sqrt(2.0), false}; break;
                case LossVariant::rho: g = {GammaShape::linear, 1.0, true}; break;
                default: break;
            }
            break;
        case LossFamily::constrained:
            switch (spec.variant) {
                case LossVariant::hinge: g = {GammaShape::linear, 1.0, true}; break;
                case LossVariant::sq: g = {GammaShape::sqrt, 1.0, false}; break;
                case LossVariant::exp: g = {GammaShape::sqrt, std::sqrt(2.0), false}; break;
                case LossVariant::rho: g = {GammaShape::linear, 1.0, true}; break;
                default: break;
            }
            break;
    }
    return g;
}

// Bound on the deferral estimation error given surrogate estimation error
// eps, in the simplified (cost-free) form: (n_e+1) Gamma(eps), with the
// outer factor dropped for linear Gamma.
inline double simplified_bound(const GammaTransform& g, double eps, const LabelSpace& space) {
    const double inner = g(std::max(0.0, eps));
    return g.removes_constants ? inner : (space.n_e + 1) * inner;
}

} // namespace l2d
