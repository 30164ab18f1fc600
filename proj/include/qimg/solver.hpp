#pragma once

// Box-constrained nonlinear least squares: projected Levenberg-Marquardt.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace qimg {

enum class WeightMode : std::uint8_t {
  InverseFrequency = 0,  ///< w_k = 1 / max(f_k, 1/N)
  Uniform = 1,
};

struct SolverConfig {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;  ///< relative to the starting projected gradient
  double step_tolerance = 1e-10;
  WeightMode weighting = WeightMode::InverseFrequency;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fills the residual vector and, when jac is non-null, its Jacobian.
using ResidualFn = std::function<void(std::span<const double> x, Eigen::VectorXd& residual,
                                      Eigen::MatrixXd* jac)>;

struct SolveResult {
  std::vector<double> x;
  double objective = 0.0;  ///< sum of squared residuals
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Minimizes |r(x)|^2 over lower <= x <= upper starting from a feasible x0.
/// The objective never increases across accepted steps.
SolveResult minimize_box(const ResidualFn& fn, std::span<const double> x0, double lower, double upper,
                         const SolverConfig& cfg);

inline SolveResult minimize_box(const ResidualFn& fn, std::span<const double> x0, const SolverConfig& cfg) {
  return minimize_box(fn, x0, 0.0, 1.0, cfg);
}

}  // namespace qimg
