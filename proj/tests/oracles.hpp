#pragma once

// Test-only oracles: finite differences and small brute-force searches kept
// independent of the library's analytic code paths.

#include <cmath>
#include <functional>
#include <vector>

#include "l2d/core.hpp"

namespace oracles {

// Central finite differences of a scalar function of a score vector.
inline std::vector<double> central_difference(const std::function<double(const l2d::ScoreVector&)>& f,
                                              l2d::ScoreVector s, double h) {
    std::vector<double> grad(s.size(), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double keep = s[i];
        s[i] = keep + h;
        const double fp = f(s);
        s[i] = keep - h;
        const double fm = f(s);
        s[i] = keep;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

struct GradientComparison {
    double worst_rel = 0.0;
    std::size_t worst_index = 0;
    bool ok = true;
};

// Relative agreement with an absolute floor for near-zero entries.
inline GradientComparison compare_gradients(const std::vector<double>& analytic,
                                            const std::vector<double>& numeric,
                                            double rel_tol = 1e-5, double abs_floor = 1e-8) {
    GradientComparison out;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::abs(analytic[i] - numeric[i]);
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), abs_floor / rel_tol});
        const double rel = diff / scale;
        if (rel > out.worst_rel) {
            out.worst_rel = rel;
            out.worst_index = i;
        }
    }
    out.ok = out.worst_rel <= rel_tol;
    return out;
}

// Minimum of f over a crude random search; a one-sided sanity bound for
// closed-form minima.
inline double random_search_min(const std::function<double(const l2d::ScoreVector&)>& f,
                                std::size_t dim, int draws, double span, l2d::Rng& rng,
                                const std::function<l2d::ScoreVector(l2d::ScoreVector)>& project) {
    double best = std::numeric_limits<double>::infinity();
    for (int d = 0; d < draws; ++d) {
        l2d::ScoreVector s(dim);
        for (auto& v : s) v = rng.uniform(-span, span);
        best = std::min(best, f(project(std::move(s))));
    }
    return best;
}

} // namespace oracles
