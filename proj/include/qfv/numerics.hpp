#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qfv {

/// Result of a finite-difference gradient check for one named parameter group.
struct GradReport {
    std::string name;
    double max_rel_error = 0.0;
    size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

/// Numerically stable log-softmax (max subtraction). Invariant under adding a
/// constant to all logits.
std::vector<double> log_softmax(std::span<const double> logits);

/// Central-difference check of `analytic` against (f(x+eps)-f(x-eps))/(2 eps)
/// per coordinate. Relative error uses denominator max(|a|, |n|, 1e-8).
/// `loss` must be deterministic; a non-finite value raises EvalError.
GradReport grad_check(const std::string& name,
                      const std::function<double(std::span<const double>)>& loss,
                      std::span<const double> params,
                      std::span<const double> analytic, double eps);

}  // namespace qfv
