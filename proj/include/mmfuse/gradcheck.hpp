#pragma once

#include <functional>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

// A scalar-valued function of a set of matrices, expressed on a fresh tape.
// The harness calls it repeatedly: once for the analytic gradients, then
// forward-only for every central-difference probe.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_entry = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Max over all entries of |analytic - central| / max(|analytic|, |central|, 1e-8).
// Reports, does not assert. `order` selects the central-difference stencil:
// 2 (two-point) or 4 (five-point, for ill-conditioned composites where
// subtraction roundoff at small eps would swamp the truncation gain).
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Matrix>& inputs,
                           double eps = 1e-6, int order = 2);

} // namespace mmfuse
