#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vga/tensor.hpp"

namespace vga {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    bool finite = true;   ///< false = numeric failure (non-finite value met)
    bool passed = false;  ///< finite && max_rel_error <= tol
    double tol = 0.0;
};

/// Central-difference gradient verification.
///
/// compute_with_grads must rebuild the computation from the parameters'
/// current values on a fresh tape, run backward, leave gradients in the
/// parameters and return the loss value. value must rebuild the forward pass
/// only. Parameters are perturbed in place and restored. The relative error
/// per entry is |analytic - numeric| / max(1, |analytic|, |numeric|), so tiny
/// gradients are compared absolutely.
GradCheckReport grad_check(const std::function<double()>& value,
                           const std::function<double()>& compute_with_grads,
                           std::span<Parameter> params, double h = 1e-5, double tol = 1e-4);

struct OpCheckResult {
    std::string op;
    double tol;
    GradCheckReport report;
};

/// Randomized gradient checks for every differentiable primitive in
/// isolation. Linear ops are held to 1e-6, nonlinear ones to 1e-4.
std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed);

}  // namespace vga
