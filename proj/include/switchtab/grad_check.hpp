#pragma once

// Central finite-difference verification of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "switchtab/error.hpp"
#include "switchtab/tensor.hpp"

namespace switchtab {

struct GradCheckConfig {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
};

struct GradReport {
    struct Entry {
        std::string name;
        double max_rel_error;
    };
    std::vector<Entry> per_parameter;
    double epsilon = 0.0;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    bool passed = false;
};

// Compares the backward pass of make_loss against (f(t+e) - f(t-e)) / 2e,
// component by component. make_loss must be deterministic given the current
// parameter values; it is re-invoked for every perturbation.
inline GradReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& make_loss,
    std::vector<Tensor> params, GradCheckConfig cfg = {}) {
    if (cfg.epsilon <= 0.0) throw DataError("grad_check: epsilon must be positive");

    for (Tensor& p : params) p.zero_grad();
    Tensor loss = make_loss(params);
    if (loss.numel() != 1) throw DataError("grad_check: loss must be scalar");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor& p : params) analytic.push_back(p.grad());

    GradReport report;
    report.epsilon = cfg.epsilon;
    report.tolerance = cfg.tolerance;

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<double>& theta = p.mutable_values();
        double worst = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + cfg.epsilon;
            const double up = make_loss(params).item();
            theta[i] = saved - cfg.epsilon;
            const double down = make_loss(params).item();
            theta[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss at a perturbed point");
            const double numeric = (up - down) / (2.0 * cfg.epsilon);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max(1e-12, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
        const std::string name =
            p.name().empty() ? "param" + std::to_string(pi) : p.name();
        report.per_parameter.push_back({name, worst});
        report.max_rel_error = std::max(report.max_rel_error, worst);
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    return report;
}

}  // namespace switchtab
