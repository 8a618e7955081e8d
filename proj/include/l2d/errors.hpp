#pragma once

#include <stdexcept>
#include <string>

namespace l2d {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invalid_score_error : error {
    using error::error;
};

struct invalid_label_error : error {
    using error::error;
};

struct unknown_point_error : error {
    using error::error;
};

struct cost_bound_error : error {
    using error::error;
};

struct constraint_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct domain_error : error {
    using error::error;
};

// Carries the best objective value seen before the optimizer gave up.
struct optimization_error : error {
    optimization_error(const std::string& what, double best)
        : error(what), best_value(best) {}
    double best_value;
};

struct training_error : error {
    training_error(const std::string& what, int epoch, int batch, double norm)
        : error(what), epoch(epoch), batch_index(batch), parameter_norm(norm) {}
    int epoch;
    int batch_index;
    double parameter_norm;
};

} // namespace l2d
