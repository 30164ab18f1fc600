#include "qimg/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace qimg {

namespace {

constexpr int kBlock = 128;
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_square(const Eigen::MatrixXd& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) throw ModelError(std::string(what) + ": matrix must be square and non-empty");
}

double sym_tol(const Eigen::MatrixXd& a) { return 1e-10 * std::max(a.cwiseAbs().maxCoeff(), 1e-300); }

bool is_symmetric(const Eigen::MatrixXd& a) { return (a - a.transpose()).cwiseAbs().maxCoeff() <= sym_tol(a); }

}  // namespace

PseudoInverse symmetric_pinv(const Eigen::MatrixXd& a, double rel_cutoff) {
  require_square(a, "pseudo-inverse");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double cut = rel_cutoff * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  PseudoInverse out;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > cut) {
      inv(i) = 1.0 / ev(i);
      ++out.rank;
    }
  }
  out.inverse = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

FisherReport build_fim(std::span<const double> probabilities, const Eigen::MatrixXd& gradients,
                       double floor) {
  const auto k = static_cast<Eigen::Index>(probabilities.size());
  if (gradients.rows() != k) throw ModelError("fim: one gradient row per outcome required");
  if (gradients.cols() == 0) throw ModelError("fim: no parameters");
  double total = 0.0;
  for (double p : probabilities) {
    if (p < 0.0 || !std::isfinite(p)) throw ModelError("fim: negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ModelError("fim: probabilities sum to " + std::to_string(total) + ", expected 1");
  }
  const Eigen::Index m = gradients.cols();
  const Eigen::Index nblocks = (k + kBlock - 1) / kBlock;
  std::vector<Eigen::MatrixXd> partial(static_cast<std::size_t>(nblocks));
  std::vector<int> skipped(static_cast<std::size_t>(nblocks), 0);

  // Fixed blocks, summed in block order: the result does not depend on the
  // number of threads.
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < nblocks; ++b) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
    const Eigen::Index end = std::min(k, (b + 1) * kBlock);
    for (Eigen::Index r = b * kBlock; r < end; ++r) {
      const double p = probabilities[static_cast<std::size_t>(r)];
      if (p < floor) {
        ++skipped[b];
        continue;
      }
      acc.selfadjointView<Eigen::Lower>().rankUpdate(gradients.row(r).transpose(), 1.0 / p);
    }
    partial[b] = acc;
  }
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(m, m);
  int skip_total = 0;
  for (Eigen::Index b = 0; b < nblocks; ++b) {
    f += partial[b];
    skip_total += skipped[b];
  }
  f = f.selfadjointView<Eigen::Lower>();
  FisherReport rep = analyze_fim(std::move(f));
  rep.probability_floor = floor;
  rep.skipped_outcomes = skip_total;
  return rep;
}

FisherReport build_fim(const ProbabilityJacobian& jac, double floor) {
  const auto k = static_cast<Eigen::Index>(jac.probability.size());
  std::vector<double> p(jac.probability);
  p.push_back(jac.no_counts);
  // The clamp of P_0 at zero can leave the sum a hair above 1.
  double sum = 0.0;
  for (double v : p) sum += v;
  if (sum > 1.0 && sum - 1.0 <= 1e-9) p.back() = std::max(0.0, p.back() - (sum - 1.0));
  Eigen::MatrixXd g(k + 1, jac.gradient.cols());
  g.topRows(k) = jac.gradient;
  g.row(k) = jac.no_counts_gradient.transpose();
  return build_fim(p, g, floor);
}

FisherReport analyze_fim(Eigen::MatrixXd fim) {
  require_square(fim, "fim");
  FisherReport rep;
  rep.fim = std::move(fim);
  const Eigen::MatrixXd& f = rep.fim;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f, Eigen::EigenvaluesOnly);
  rep.lambda_min = es.eigenvalues()(0);
  rep.lambda_max = es.eigenvalues()(f.rows() - 1);
  const PseudoInverse pinv = symmetric_pinv(f);
  rep.rank = pinv.rank;
  rep.singular = !pinv.full_rank();
  rep.inv_trace = pinv.inverse.trace();
  rep.gershgorin_lower = gershgorin_lower(f);
  rep.trace_lower = trace_lower(f);
  const DominanceProfile dom = dominance_profile(f);
  rep.dominance_ratios = dom.ratios;
  rep.min_dominance = dom.min_ratio;
  rep.effective_bandwidth = effective_bandwidth(f);
  rep.inverse_min_dominance = rep.singular ? 0.0 : dominance_profile(pinv.inverse).min_ratio;
  return rep;
}

CrbTotal crb_total(const Eigen::MatrixXd& fim, double n_events) {
  if (!(n_events > 0.0)) throw ModelError("crb: event count must be positive");
  const PseudoInverse pinv = symmetric_pinv(fim);
  return {pinv.inverse.trace() / n_events, pinv.rank, !pinv.full_rank()};
}

double gershgorin_lower(const Eigen::MatrixXd& fim) {
  require_square(fim, "gershgorin");
  double best = kInf;
  for (Eigen::Index j = 0; j < fim.rows(); ++j) {
    const double off = fim.row(j).cwiseAbs().sum() - std::abs(fim(j, j));
    best = std::min(best, fim(j, j) - off);
  }
  return best;
}

double trace_lower(const Eigen::MatrixXd& fim) {
  require_square(fim, "trace bound");
  const double m = static_cast<double>(fim.rows());
  const double mean = fim.trace() / m;
  const double s = std::max((fim * fim).trace() / m - mean * mean, 0.0);
  return mean - std::sqrt((m - 1.0) * s);
}

DominanceProfile dominance_profile(const Eigen::MatrixXd& fim, double threshold) {
  require_square(fim, "dominance");
  DominanceProfile out;
  out.min_ratio = kInf;
  for (Eigen::Index j = 0; j < fim.rows(); ++j) {
    const double off = fim.row(j).cwiseAbs().sum() - std::abs(fim(j, j));
    const double r = off > 0.0 ? fim(j, j) / off : kInf;
    out.ratios.push_back(r);
    out.min_ratio = std::min(out.min_ratio, r);
  }
  out.verdict = out.min_ratio >= threshold;
  return out;
}

int effective_bandwidth(const Eigen::MatrixXd& fim, double eps) {
  require_square(fim, "bandwidth");
  const Eigen::Index m = fim.rows();
  // mass[d] = sum of |F_jk| with |j - k| = d
  std::vector<double> mass(static_cast<std::size_t>(m), 0.0);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index k = 0; k < m; ++k) {
      if (j != k) mass[static_cast<std::size_t>(std::abs(j - k))] += std::abs(fim(j, k));
    }
  }
  double total = 0.0;
  for (double v : mass) total += v;
  if (total == 0.0) return 0;
  double outside = total;
  for (Eigen::Index l = 0; l < m; ++l) {
    outside -= mass[static_cast<std::size_t>(l)];
    if (l == 0) outside = total;  // the diagonal carries no off-diagonal mass
    if (outside <= eps * total * (1.0 + 1e-12)) return static_cast<int>(l);
  }
  return static_cast<int>(m - 1);
}

DiagonalBracket tridiag_inverse_bounds(const Eigen::MatrixXd& a, int j) {
  require_square(a, "tridiagonal bounds");
  const int m = static_cast<int>(a.rows());
  if (j < 0 || j >= m) throw ModelError("tridiagonal bounds: index out of range");
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      if (std::abs(r - c) > 1 && a(r, c) != 0.0) throw ModelError("tridiagonal bounds: matrix is not tridiagonal");
    }
    const double off = a.row(r).cwiseAbs().sum() - std::abs(a(r, r));
    if (!(a(r, r) > off)) throw ModelError("tridiagonal bounds: matrix is not strictly diagonally dominant");
    if (r + 1 < m && a(r, r + 1) * a(r + 1, r) < 0.0) {
      throw ModelError("tridiagonal bounds: off-diagonal pair of mixed sign");
    }
  }
  const auto e = [&](int r, int c) { return (r >= 0 && r < m && c >= 0 && c < m) ? std::abs(a(r, c)) : 0.0; };
  double s = 0.0, f = 0.0, t = 0.0, g = 0.0;
  if (j > 0) {
    s = -e(j - 1, j) / (e(j - 1, j - 1) + e(j - 1, j - 2));
    f = -e(j - 1, j) / (e(j - 1, j - 1) - e(j - 1, j - 2));
  }
  if (j + 1 < m) {
    t = -e(j + 1, j) / (e(j + 1, j + 1) + e(j + 1, j + 2));
    g = -e(j + 1, j) / (e(j + 1, j + 1) - e(j + 1, j + 2));
  }
  return {1.0 / (e(j, j) + s * e(j, j - 1) + t * e(j, j + 1)),
          1.0 / (e(j, j) + f * e(j, j - 1) + g * e(j, j + 1))};
}

BandedInverseCheck banded_inverse_approx_check(const Eigen::MatrixXd& a, int n) {
  require_square(a, "banded inverse");
  if (n < 0) throw ModelError("banded inverse: n must be >= 0");
  if (!is_symmetric(a)) throw ModelError("banded inverse: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const double lmin = es.eigenvalues()(0);
  const double lmax = es.eigenvalues()(a.rows() - 1);
  if (!(lmin > 0.0)) throw ModelError("banded inverse: matrix is not positive definite");
  const Eigen::Index m = a.rows();
  BandedInverseCheck out;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      if (a(r, c) != 0.0) out.bandwidth = std::max(out.bandwidth, static_cast<int>(std::abs(r - c)));
    }
  }
  const Eigen::MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                              es.eigenvectors().transpose();
  const Eigen::Index band = static_cast<Eigen::Index>(n) * out.bandwidth;
  Eigen::MatrixXd gap = inv;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      if (std::abs(r - c) <= band) gap(r, c) = 0.0;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gs(gap, Eigen::EigenvaluesOnly);
  out.distance = gs.eigenvalues().cwiseAbs().maxCoeff();
  out.bound = (1.0 / lmin) * std::pow((lmax - lmin) / (lmax + lmin), n + 1);
  out.pass = out.distance <= out.bound * (1.0 + 1e-9) + 1e-15;
  return out;
}

BiasedCrb biased_crb(const Eigen::MatrixXd& fim, const Eigen::MatrixXd& bias_gradient, double n_events) {
  require_square(fim, "biased crb");
  if (bias_gradient.rows() != fim.rows() || bias_gradient.cols() != fim.cols()) {
    throw ModelError("biased crb: bias gradient has the wrong shape");
  }
  if (!(n_events > 0.0)) throw ModelError("biased crb: event count must be positive");
  const PseudoInverse pinv = symmetric_pinv(fim);
  const Eigen::MatrixXd lead = Eigen::MatrixXd::Identity(fim.rows(), fim.cols()) + bias_gradient;
  BiasedCrb out;
  out.bound = lead * pinv.inverse * lead.transpose() / n_events;
  out.bound = 0.5 * (out.bound + out.bound.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.bound, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues()(0);
  const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  out.psd = out.min_eigenvalue >= -1e-9 * scale;
  out.rank = pinv.rank;
  out.singular = !pinv.full_rank();
  return out;
}

double estimate_gamma(const Eigen::MatrixXd& bias_gradient) {
  if (bias_gradient.size() == 0) throw ModelError("gamma: empty bias gradient");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bias_gradient.transpose() * bias_gradient,
                                                    Eigen::EigenvaluesOnly);
  return std::max(es.eigenvalues().maxCoeff(), 0.0);
}

std::optional<double> gamma_total_bound(const Eigen::MatrixXd& fim, double gamma, double n_events) {
  if (!(gamma >= 0.0) || gamma > 1.0) return std::nullopt;
  const double lead = 1.0 - std::sqrt(gamma);
  return lead * lead * crb_total(fim, n_events).total;
}

ClippedEstimatorStats clipped_estimator_stats(double x, double f11, double n_events) {
  if (!(x <= 1.0)) throw ModelError("clipped estimator: x must be <= 1");
  const double fn = f11 * n_events;
  if (!(fn > 0.0)) throw ModelError("clipped estimator: F11 N must be positive");
  ClippedEstimatorStats s;
  s.x = x;
  s.delta2 = 1.0 / fn;
  s.xi = (1.0 - x) * std::sqrt(fn / 2.0);
  const double erf_xi = std::erf(s.xi);
  const double gauss = std::exp(-s.xi * s.xi);
  s.mean = 0.5 * (1.0 - erf_xi + x * (1.0 + erf_xi) - gauss * std::sqrt(2.0 / (std::numbers::pi * fn)));
  s.variance_bound = 0.5 * (1.0 + erf_xi) * s.delta2;
  s.mse = (0.5 * (1.0 + erf_xi) - s.xi * s.xi * (1.0 - erf_xi) - s.xi / std::sqrt(std::numbers::pi) * gauss) *
          s.delta2;

  // Truncated-normal moments with c = (1 - x)/Delta = sqrt(2) xi.
  const double delta = std::sqrt(s.delta2);
  const double c = std::numbers::sqrt2 * s.xi;
  const double cdf = 0.5 * (1.0 + erf_xi);
  const double pdf = std::exp(-0.5 * c * c) / std::sqrt(2.0 * std::numbers::pi);
  const double second = (1.0 - cdf) + x * x * cdf - 2.0 * x * delta * pdf + s.delta2 * (cdf - c * pdf);
  s.variance = std::max(second - s.mean * s.mean, 0.0);
  s.bias_gradient_bound = cdf * cdf * s.delta2;
  return s;
}

void write_report(std::ostream& out, const FisherReport& r) {
  const auto old = out.precision(17);
  out << "fisher-report 1\n";
  out << "parameters " << r.size() << '\n';
  out << "rank " << r.rank << '\n';
  out << "singular " << (r.singular ? 1 : 0) << '\n';
  out << "inv_trace " << r.inv_trace << '\n';
  out << "lambda_min " << r.lambda_min << '\n';
  out << "lambda_max " << r.lambda_max << '\n';
  out << "gershgorin_lower " << r.gershgorin_lower << '\n';
  out << "trace_lower " << r.trace_lower << '\n';
  out << "min_dominance " << r.min_dominance << '\n';
  out << "inverse_min_dominance " << r.inverse_min_dominance << '\n';
  out << "effective_bandwidth " << r.effective_bandwidth << '\n';
  out << "probability_floor " << r.probability_floor << '\n';
  out << "skipped_outcomes " << r.skipped_outcomes << '\n';
  out << "dominance_ratios";
  for (double v : r.dominance_ratios) out << ' ' << v;
  out << "\nmatrix\n";
  for (Eigen::Index i = 0; i < r.fim.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.fim.cols(); ++j) out << (j ? "," : "") << r.fim(i, j);
    out << '\n';
  }
  out << "end\n";
  out.precision(old);
}

FisherReport read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "fisher-report 1") throw ModelError("fisher report: bad header");
  int m = -1;
  double floor = kProbabilityFloor;
  int skipped = 0;
  while (std::getline(in, line) && line != "matrix") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "parameters") ls >> m;
    else if (key == "probability_floor") ls >> floor;
    else if (key == "skipped_outcomes") ls >> skipped;
  }
  if (m <= 0 || line != "matrix") throw ModelError("fisher report: missing matrix block");
  Eigen::MatrixXd f(m, m);
  for (int i = 0; i < m; ++i) {
    if (!std::getline(in, line)) throw ModelError("fisher report: truncated matrix");
    std::istringstream ls(line);
    std::string cell;
    for (int j = 0; j < m; ++j) {
      if (!std::getline(ls, cell, ',')) throw ModelError("fisher report: short matrix row");
      f(i, j) = std::stod(cell);
    }
  }
  FisherReport rep = analyze_fim(std::move(f));
  rep.probability_floor = floor;
  rep.skipped_outcomes = skipped;
  return rep;
}

}  // namespace qimg
