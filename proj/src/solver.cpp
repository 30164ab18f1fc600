#include "qimg/solver.hpp"

#include <algorithm>
#include <cmath>

#include "qimg/errors.hpp"

namespace qimg {

void SolverConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("solver: max_iterations must be >= 1");
  if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0)) {
    throw ConfigError("solver: tolerances must be positive");
  }
}

namespace {

double projected_gradient_norm(const std::vector<double>& x, const Eigen::VectorXd& g, double lo, double hi) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // |clamp(x - g) - x| without forming x - g, which loses tiny gradients.
    const double gi = g(static_cast<Eigen::Index>(i));
    const double room = gi > 0.0 ? x[i] - lo : hi - x[i];
    worst = std::max(worst, std::min(std::abs(gi), room));
  }
  return worst;
}

}  // namespace

SolveResult minimize_box(const ResidualFn& fn, std::span<const double> x0, double lower, double upper,
                         const SolverConfig& cfg) {
  cfg.validate();
  if (!(lower < upper)) throw ModelError("solver: empty box");
  SolveResult res;
  res.x.assign(x0.begin(), x0.end());
  for (double v : res.x) {
    if (!(v >= lower && v <= upper)) throw ModelError("solver: starting point is infeasible");
  }
  const auto n = static_cast<Eigen::Index>(res.x.size());
  if (n == 0) {
    res.converged = true;
    return res;
  }

  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  fn(res.x, r, &jac);
  ++res.evaluations;
  res.objective = r.squaredNorm();
  Eigen::VectorXd g = jac.transpose() * r;
  const double pg0 = std::max(projected_gradient_norm(res.x, g, lower, upper), 1e-300);
  double mu = 1e-3;

  std::vector<double> trial(res.x.size());
  Eigen::VectorXd r_trial;
  for (res.iterations = 0; res.iterations < cfg.max_iterations; ++res.iterations) {
    const double pg = projected_gradient_norm(res.x, g, lower, upper);
    if (pg <= cfg.gradient_tolerance * pg0 || res.objective == 0.0) {
      res.converged = true;
      return res;
    }
    // Variables held at a bound by an outward gradient stay fixed.
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xi = res.x[static_cast<std::size_t>(i)];
      const bool pinned = (xi <= lower && g(i) > 0.0) || (xi >= upper && g(i) < 0.0);
      if (!pinned) free.push_back(i);
    }
    if (free.empty()) {
      res.converged = true;
      return res;
    }
    const Eigen::MatrixXd jf = jac(Eigen::all, free);
    const Eigen::MatrixXd jtj = jf.transpose() * jf;
    const Eigen::VectorXd gf = g(free);
    const double dscale = std::max(jtj.diagonal().maxCoeff(), 1e-300);

    bool accepted = false;
    double step = 0.0;
    while (mu < 1e16) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += mu * std::max(jtj(i, i), 1e-12 * dscale);
      const Eigen::VectorXd delta = a.ldlt().solve(-gf);
      trial = res.x;
      step = 0.0;
      for (std::size_t f = 0; f < free.size(); ++f) {
        const auto i = static_cast<std::size_t>(free[f]);
        trial[i] = std::clamp(res.x[i] + delta(static_cast<Eigen::Index>(f)), lower, upper);
        step = std::max(step, std::abs(trial[i] - res.x[i]));
      }
      if (step == 0.0) break;
      fn(trial, r_trial, nullptr);
      ++res.evaluations;
      const double obj = r_trial.squaredNorm();
      if (std::isfinite(obj) && obj < res.objective) {
        accepted = true;
        res.x = trial;
        res.objective = obj;
        mu = std::max(mu / 3.0, 1e-12);
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) {
      // No descent left at working precision.
      res.converged = true;
      return res;
    }
    fn(res.x, r, &jac);
    ++res.evaluations;
    g = jac.transpose() * r;
    if (step <= cfg.step_tolerance) {
      res.converged = true;
      ++res.iterations;
      return res;
    }
  }
  return res;
}

}  // namespace qimg
