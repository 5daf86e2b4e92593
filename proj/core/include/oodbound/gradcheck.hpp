#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include <Eigen/Core>

namespace oodbound {

/// Floor on the relative-error denominator; saturated losses have gradients near round-off.
inline constexpr double kRelativeErrorFloor = 1e-6;

/// Max-norm relative error between two gradients:
/// |a - n|_inf / max(|a|_inf, |n|_inf, kRelativeErrorFloor).
double relative_error(const Eigen::Ref<const Eigen::MatrixXd>& analytic,
                      const Eigen::Ref<const Eigen::MatrixXd>& numeric);

/// Central differences of `loss` w.r.t. every entry of `param`, which is
/// perturbed in place and restored.
Eigen::MatrixXd central_difference(const std::function<double()>& loss, Eigen::MatrixXd& param,
                                   double step);

struct GradCheckOptions {
  std::size_t trials = 20;
  double step = 1e-6;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  /// Negative control: perturbs the analytic gradient before comparing.
  bool corrupt_gradient = false;
};

struct GradCheckResult {
  double worst_error = 0.0;
  std::string worst_case;
  std::size_t checks = 0;
  bool passed = true;
};

/// Random small LMCL and triplet instances (d_in <= 8, k <= 4, batch <= 8),
/// `trials` of each, every parameter tensor compared against central differences.
GradCheckResult run_gradcheck(const GradCheckOptions& options);

}  // namespace oodbound
