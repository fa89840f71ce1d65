#include "qfv/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "qfv/errors.hpp"

namespace qfv {

std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("log_softmax: empty input");
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

GradReport grad_check(const std::string& name,
                      const std::function<double(std::span<const double>)>& loss,
                      std::span<const double> params,
                      std::span<const double> analytic, double eps) {
    if (params.size() != analytic.size())
        throw DimensionError("grad_check: params/analytic length mismatch");
    if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");

    std::vector<double> work(params.begin(), params.end());
    GradReport report;
    report.name = name;
    for (size_t i = 0; i < work.size(); ++i) {
        double saved = work[i];
        work[i] = saved + eps;
        double fp = loss(work);
        work[i] = saved - eps;
        double fm = loss(work);
        work[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EvalError("grad_check: non-finite loss at parameter " + name);
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel >= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

}  // namespace qfv
