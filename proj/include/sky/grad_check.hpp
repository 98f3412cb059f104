#pragma once

#include <functional>

#include "sky/tensor.hpp"

namespace sky {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
    std::int64_t excluded_nonsmooth = 0;
    std::int64_t worst_index = -1;
    double tol = 0.0;
    bool pass = false;
};

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at `point`.
///
/// Coordinates where the one-sided difference quotients disagree strongly
/// (a kink, e.g. relu at exactly zero) are flagged non-smooth and excluded
/// from the comparison rather than reported as failures. The function is
/// evaluated twice at the base point first; a bitwise mismatch means f is
/// not deterministic and raises ContractError.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double eps = 1e-6, double tol = 1e-4);

/// Relative-error core shared by grad_check and the model-level checks:
/// |a - b| beyond the finite-difference noise allowance, relative to scale.
double fd_rel_error(double analytic, double numeric, double f_scale, double eps);

}  // namespace sky
