#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "epo/params.hpp"

namespace epo {

/// Scalar loss over a ParamVector. When `grad` is non-empty the closure must
/// also fill it with the analytic gradient (same layout as the params).
using GradCheckLoss =
    std::function<double(const ParamVector& params, std::span<double> grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<double> per_param_error;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Central finite-difference check of the closure's analytic gradient.
/// Relative error uses an absolute floor of 1e-3 so near-zero coordinates do
/// not drown in finite-difference noise.
inline GradCheckReport gradient_check(ParamVector params, const GradCheckLoss& loss,
                                      double h = 1e-6) {
  const std::size_t n = params.size();
  std::vector<double> analytic(n, 0.0);
  loss(params, analytic);

  GradCheckReport report;
  report.per_param_error.resize(n, 0.0);
  auto values = params.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double f_plus = loss(params, {});
    values[i] = saved - h;
    const double f_minus = loss(params, {});
    values[i] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    report.per_param_error[i] = rel;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace epo
