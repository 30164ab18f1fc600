#pragma once

// Fisher information, Cramer-Rao totals and the matrix bounds used to judge
// whether a measurement is local enough for windowed reconstruction.
//
// Not implemented: the approximately-banded inverse bound and the
// pentadiagonal analogue of the tridiagonal bracket.

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qimg/forward.hpp"

namespace qimg {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kRankCutoff = 1e-10;
inline constexpr double kDominanceThreshold = 3.0;
inline constexpr double kBandwidthEpsilon = 0.05;

struct FisherReport {
  Eigen::MatrixXd fim;
  double inv_trace = 0.0;  ///< Tr F^-1 (pseudo-inverse when rank deficient)
  int rank = 0;
  bool singular = false;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double gershgorin_lower = 0.0;
  double trace_lower = 0.0;
  std::vector<double> dominance_ratios;
  double min_dominance = 0.0;
  int effective_bandwidth = 0;
  /// Smallest rho_j of F^-1, a diagnostic only.
  double inverse_min_dominance = 0.0;
  double probability_floor = kProbabilityFloor;
  int skipped_outcomes = 0;

  int size() const { return static_cast<int>(fim.rows()); }
};

/// F from outcome probabilities and their gradients (one row per outcome).
/// Every outcome, including the no-counts one, must be listed. Outcomes below
/// `floor` are skipped.
FisherReport build_fim(std::span<const double> probabilities, const Eigen::MatrixXd& gradients,
                       double floor = kProbabilityFloor);

/// Same, from a forward-model Jacobian with the no-counts outcome appended.
FisherReport build_fim(const ProbabilityJacobian& jac, double floor = kProbabilityFloor);

/// Diagnostics (bounds, dominance, bandwidth, inverse) for a given F.
FisherReport analyze_fim(Eigen::MatrixXd fim);

struct PseudoInverse {
  Eigen::MatrixXd inverse;
  int rank = 0;
  bool full_rank() const { return rank == inverse.rows(); }
};

/// Symmetric eigendecomposition inverse; eigenvalues below
/// rel_cutoff * max|lambda| are dropped.
PseudoInverse symmetric_pinv(const Eigen::MatrixXd& a, double rel_cutoff = kRankCutoff);

struct CrbTotal {
  double total = 0.0;  ///< Tr F^-1 / N
  int rank = 0;
  bool rank_deficient = false;
};
CrbTotal crb_total(const Eigen::MatrixXd& fim, double n_events);

double gershgorin_lower(const Eigen::MatrixXd& fim);
double trace_lower(const Eigen::MatrixXd& fim);

struct DominanceProfile {
  std::vector<double> ratios;  ///< F_jj / sum_{k != j} |F_jk|, +inf for isolated rows
  double min_ratio = 0.0;
  bool verdict = false;  ///< min_ratio >= threshold
};
DominanceProfile dominance_profile(const Eigen::MatrixXd& fim, double threshold = kDominanceThreshold);

/// Smallest l with sum_{|j-k| > l} |F_jk| <= eps * sum_{j != k} |F_jk|.
int effective_bandwidth(const Eigen::MatrixXd& fim, double eps = kBandwidthEpsilon);

struct DiagonalBracket {
  double lower = 0.0;
  double upper = 0.0;
};

/// Bracket for |(A^-1)_jj| of a strictly diagonally dominant tridiagonal A.
/// The coefficients are those for nonnegative entries; they also hold when
/// the diagonal is positive and every product a_{j,j+1} a_{j+1,j} is >= 0,
/// which covers symmetric matrices.
DiagonalBracket tridiag_inverse_bounds(const Eigen::MatrixXd& a, int j);

struct BandedInverseCheck {
  int bandwidth = 0;      ///< l of A
  double distance = 0.0;  ///< ||A^-1 - band_{n l}(A^-1)||_2
  double bound = 0.0;
  bool pass = false;
};

/// Compares the band truncation of A^-1 with the exponential-decay bound for
/// inverses of banded SPD matrices.
BandedInverseCheck banded_inverse_approx_check(const Eigen::MatrixXd& a, int n);

struct BiasedCrb {
  Eigen::MatrixXd bound;  ///< (I + U) F^-1 (I + U^T) / N
  bool psd = false;
  double min_eigenvalue = 0.0;
  int rank = 0;
  bool singular = false;
};
BiasedCrb biased_crb(const Eigen::MatrixXd& fim, const Eigen::MatrixXd& bias_gradient, double n_events);

/// Largest eigenvalue of U^T U.
double estimate_gamma(const Eigen::MatrixXd& bias_gradient);

/// (1 - sqrt(gamma))^2 Tr F^-1 / N; empty when gamma > 1 or negative.
std::optional<double> gamma_total_bound(const Eigen::MatrixXd& fim, double gamma, double n_events);

/// Statistics of y' = min(y, 1) with y ~ Normal(x, Delta^2), Delta^2 = 1/(F11 N).
struct ClippedEstimatorStats {
  double x = 0.0;
  double delta2 = 0.0;
  double xi = 0.0;  ///< (1 - x) sqrt(F11 N / 2)
  double mean = 0.0;
  /// Closed form (1 + erf xi) Delta^2 / 2.
  double variance_bound = 0.0;
  double mse = 0.0;
  /// Exact variance of y'.
  double variance = 0.0;
  /// (d<y'>/dx)^2 Delta^2, the biased bound for this estimator.
  double bias_gradient_bound = 0.0;
};
ClippedEstimatorStats clipped_estimator_stats(double x, double f11, double n_events);

void write_report(std::ostream& out, const FisherReport& report);
/// Reads a report written by write_report; diagnostics are re-derived from F.
FisherReport read_report(std::istream& in);

}  // namespace qimg
