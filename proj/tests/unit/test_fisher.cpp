#include "doctest.h"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "qimg/fisher.hpp"
#include "qimg/random.hpp"

using namespace qimg;

namespace {

Eigen::MatrixXd random_symmetric(int m, Philox4x32& g) {
  Eigen::MatrixXd a(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) a(r, c) = 2 * g.uniform() - 1;
  return 0.5 * (a + a.transpose());
}

Eigen::MatrixXd random_spd(int m, Philox4x32& g) {
  const Eigen::MatrixXd a = random_symmetric(m, g);
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(m, m);
}

Eigen::MatrixXd random_tridiagonal(int m, double dominance, Philox4x32& g) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (int r = 0; r + 1 < m; ++r) a(r, r + 1) = a(r + 1, r) = -(0.2 + 0.8 * g.uniform());
  for (int r = 0; r < m; ++r) a(r, r) = dominance * (a.row(r).cwiseAbs().sum() + 0.01);
  return a;
}

double lambda_min(const Eigen::MatrixXd& a) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

}  // namespace

TEST_CASE("binary model information") {
  // p(x) = x^2 / 2: F = p'^2 / (p (1 - p)).
  const double x = 0.6, p = x * x / 2, dp = x;
  Eigen::MatrixXd grad(2, 1);
  grad << dp, -dp;
  const std::vector<double> probs{p, 1 - p};
  const FisherReport r = build_fim(probs, grad);
  CHECK(r.fim(0, 0) == doctest::Approx(dp * dp / (p * (1 - p))));
  CHECK(r.rank == 1);
  CHECK_FALSE(r.singular);

  const std::vector<double> bad{0.3, 0.3};
  CHECK_THROWS_AS(build_fim(bad, grad), ModelError);
}

TEST_CASE("independent outcomes give a diagonal matrix") {
  // Outcome j depends only on parameter j.
  const std::vector<double> probs{0.2, 0.3, 0.5};
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(3, 3);
  grad(0, 0) = 0.4;
  grad(1, 1) = -0.7;
  grad(2, 2) = 0.1;
  const FisherReport r = build_fim(probs, grad);
  CHECK((r.fim - Eigen::MatrixXd(r.fim.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.effective_bandwidth == 0);
}

TEST_CASE("probability floor skips vanishing outcomes") {
  const std::vector<double> probs{1.0, 0.0};
  Eigen::MatrixXd grad(2, 1);
  grad << 0.0, 1.0;
  const FisherReport r = build_fim(probs, grad);
  CHECK(r.skipped_outcomes == 1);
  CHECK(r.probability_floor == kProbabilityFloor);
  CHECK(std::isfinite(r.fim(0, 0)));
}

TEST_CASE("crb totals") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 2.0, 4.0, 8.0;
  CHECK(crb_total(d, 10.0).total == doctest::Approx((0.5 + 0.25 + 0.125) / 10));
  CHECK(crb_total(Eigen::MatrixXd::Identity(10, 10), 100.0).total == doctest::Approx(0.1));
  Philox4x32 g(5, 0);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd f = random_spd(7, g);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f).eigenvalues();
    const double expect = ev.cwiseInverse().sum() / 3.0;
    CHECK(std::abs(crb_total(f, 3.0).total - expect) <= 1e-10 * expect);
    // Cauchy-Schwarz: Tr F^-1 >= M^2 / Tr F.
    CHECK(crb_total(f, 1.0).total >= 49.0 / f.trace() * (1 - 1e-12));
  }
  Eigen::MatrixXd sing = Eigen::MatrixXd::Zero(2, 2);
  sing(0, 0) = 1.0;
  const CrbTotal c = crb_total(sing, 1.0);
  CHECK(c.rank_deficient);
  CHECK(c.rank == 1);
}

TEST_CASE("eigenvalue lower bounds") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 3.0, 1.5, 2.0;
  CHECK(gershgorin_lower(d) == 1.5);
  Eigen::MatrixXd two(2, 2);
  two << 2, 1, 1, 2;
  CHECK(gershgorin_lower(two) == doctest::Approx(1.0));
  CHECK(trace_lower(two) == doctest::Approx(1.0));
  CHECK(trace_lower(4.0 * Eigen::MatrixXd::Identity(5, 5)) == doctest::Approx(4.0));

  Philox4x32 g(6, 0);
  for (int t = 0; t < 200; ++t) {
    const int m = 2 + t % 9;
    const Eigen::MatrixXd a = random_symmetric(m, g);
    const double lm = lambda_min(a);
    CHECK(gershgorin_lower(a) <= lm + 1e-12);
    CHECK(trace_lower(a) <= lm + 1e-12);
  }
}

TEST_CASE("dominance profile") {
  const DominanceProfile diag = dominance_profile(Eigen::MatrixXd::Identity(4, 4));
  for (double r : diag.ratios) CHECK(r == std::numeric_limits<double>::infinity());
  CHECK(diag.verdict);
  const DominanceProfile ones = dominance_profile(Eigen::MatrixXd::Ones(2, 2), 3.0);
  CHECK(ones.ratios[0] == doctest::Approx(1.0));
  CHECK_FALSE(ones.verdict);
}

TEST_CASE("effective bandwidth") {
  CHECK(effective_bandwidth(Eigen::MatrixXd::Identity(5, 5)) == 0);
  Philox4x32 g(7, 0);
  const Eigen::MatrixXd t = random_tridiagonal(9, 2.0, g);
  CHECK(effective_bandwidth(t, 0.0) == 1);
  CHECK(effective_bandwidth(t, 0.9) == 1);
  Eigen::MatrixXd p = t;
  p(0, 4) = p(4, 0) = 1e-6;
  CHECK(effective_bandwidth(p, 0.05) == 1);
  CHECK(effective_bandwidth(p, 1e-9) == 4);
}

TEST_CASE("tridiagonal inverse bracket") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 2.0, 4.0, 5.0;
  const DiagonalBracket b = tridiag_inverse_bounds(d, 1);
  CHECK(b.lower == doctest::Approx(0.25));
  CHECK(b.upper == doctest::Approx(0.25));

  Philox4x32 g(8, 0);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd a = random_tridiagonal(20, 1.5, g);
    const Eigen::MatrixXd inv = a.inverse();
    for (int j = 0; j < 20; ++j) {
      const DiagonalBracket br = tridiag_inverse_bounds(a, j);
      CHECK(br.lower <= std::abs(inv(j, j)) * (1 + 1e-12));
      CHECK(std::abs(inv(j, j)) <= br.upper * (1 + 1e-12));
    }
  }

  // The bracket narrows as dominance grows.
  Philox4x32 h(9, 0);
  const Eigen::MatrixXd base = random_tridiagonal(12, 1.0, h);
  double prev = std::numeric_limits<double>::infinity();
  for (double k : {1.2, 1.5, 2.0, 4.0, 8.0}) {
    Eigen::MatrixXd a = base;
    a.diagonal() *= k;
    const DiagonalBracket br = tridiag_inverse_bounds(a, 5);
    const double rel = (br.upper - br.lower) / br.upper;
    CHECK(rel < prev);
    prev = rel;
  }

  Eigen::MatrixXd weak(2, 2);
  weak << 1, 2, 2, 1;
  CHECK_THROWS_AS(tridiag_inverse_bounds(weak, 0), ModelError);
  Eigen::MatrixXd full = Eigen::MatrixXd::Identity(3, 3) * 5;
  full(0, 2) = full(2, 0) = 0.1;
  CHECK_THROWS_AS(tridiag_inverse_bounds(full, 0), ModelError);
}

TEST_CASE("banded inverse check") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(4, 4);
  d.diagonal() << 1.0, 2.0, 3.0, 4.0;
  for (int n = 0; n < 4; ++n) {
    const BandedInverseCheck c = banded_inverse_approx_check(d, n);
    CHECK(c.distance == 0.0);
    CHECK(c.pass);
  }
  Philox4x32 g(10, 0);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd a = random_tridiagonal(32, 1.1 + 0.1 * t, g);
    for (int n = 1; n <= 5; ++n) {
      const BandedInverseCheck c = banded_inverse_approx_check(a, n);
      CHECK(c.bandwidth == 1);
      CHECK(c.pass);
    }
  }
  // Well-conditioned limit.
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(10, 10);
  for (int r = 0; r + 1 < 10; ++r) w(r, r + 1) = w(r + 1, r) = 1e-4;
  const BandedInverseCheck c = banded_inverse_approx_check(w, 1);
  CHECK(c.bound < 1e-6);
  CHECK(c.distance < 1e-6);
  Eigen::MatrixXd ns = Eigen::MatrixXd::Identity(3, 3);
  ns(0, 1) = 0.5;
  CHECK_THROWS_AS(banded_inverse_approx_check(ns, 1), ModelError);
}

TEST_CASE("rank-one no-counts term does not lower the smallest eigenvalue") {
  Philox4x32 g(11, 0);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd f = random_spd(6, g);
    Eigen::VectorXd v(6);
    for (int i = 0; i < 6; ++i) v(i) = 2 * g.uniform() - 1;
    const Eigen::MatrixXd fbar = f + v * v.transpose() / (0.05 + g.uniform());
    CHECK(lambda_min(fbar) >= lambda_min(f) - 1e-12);
  }
}

TEST_CASE("biased bounds") {
  Philox4x32 g(12, 0);
  const Eigen::MatrixXd f = random_spd(4, g);
  const Eigen::MatrixXd inv = f.inverse();
  const BiasedCrb zero = biased_crb(f, Eigen::MatrixXd::Zero(4, 4), 10.0);
  CHECK((zero.bound - inv / 10.0).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(zero.psd);
  const BiasedCrb constant = biased_crb(f, -Eigen::MatrixXd::Identity(4, 4), 10.0);
  CHECK(constant.bound.cwiseAbs().maxCoeff() == 0.0);

  // Scalar clipped estimator at x = 1: (1 + U)^2 Delta^2 with 1 + U = d<y'>/dx = 1/2.
  Eigen::MatrixXd f11(1, 1);
  f11 << 50.0;
  Eigen::MatrixXd u(1, 1);
  u << -0.5;
  CHECK(biased_crb(f11, u, 1.0).bound(0, 0) == doctest::Approx(0.25 / 50.0));

  const double total = inv.trace() / 7.0;
  CHECK(*gamma_total_bound(f, 0.0, 7.0) == doctest::Approx(total));
  CHECK(*gamma_total_bound(f, 0.25, 7.0) == doctest::Approx(0.25 * total));
  CHECK(*gamma_total_bound(f, 1.0, 7.0) == 0.0);
  CHECK_FALSE(gamma_total_bound(f, 1.5, 7.0).has_value());
  CHECK(estimate_gamma(0.5 * Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(0.25));
}

TEST_CASE("clipped estimator statistics") {
  const double fn = 50.0, delta2 = 1.0 / fn;
  const ClippedEstimatorStats at1 = clipped_estimator_stats(1.0, fn, 1.0);
  CHECK(at1.xi == 0.0);
  CHECK(at1.variance_bound == doctest::Approx(0.5 * delta2));
  CHECK(at1.mse == doctest::Approx(0.5 * delta2));
  // Truncated normal at its mean: variance (1/2 - 1/(2 pi)) Delta^2.
  CHECK(at1.variance == doctest::Approx((0.5 - 0.5 / M_PI) * delta2));
  CHECK(at1.bias_gradient_bound == doctest::Approx(0.25 * delta2));
  CHECK(at1.mean == doctest::Approx(1.0 - std::sqrt(delta2 / (2 * M_PI))));

  const ClippedEstimatorStats far = clipped_estimator_stats(0.0, 5000.0, 1.0);
  CHECK(far.mean == doctest::Approx(0.0).scale(1.0));
  CHECK(far.variance_bound == doctest::Approx(far.delta2));
  for (int i = 0; i <= 40; ++i) {
    const ClippedEstimatorStats s = clipped_estimator_stats(i / 40.0, fn, 1.0);
    CHECK(s.mse <= s.delta2 * (1 + 1e-12));
    // Exact moments by quadrature of the clipped normal density.
    const double sd = std::sqrt(s.delta2);
    double m1 = 0.0, m2 = 0.0, err2 = 0.0;
    const int steps = 20000;
    const double lo = s.x - 10.0 * sd;
    const double h = (1.0 - lo) / steps;
    for (int k = 0; k < steps; ++k) {
      const double y = lo + (k + 0.5) * h;
      const double w = std::exp(-0.5 * (y - s.x) * (y - s.x) / s.delta2) / (sd * std::sqrt(2.0 * M_PI)) * h;
      m1 += w * y;
      m2 += w * y * y;
      err2 += w * (y - s.x) * (y - s.x);
    }
    const double tail = 0.5 * std::erfc((1.0 - s.x) / (sd * std::sqrt(2.0)));
    m1 += tail;
    m2 += tail;
    err2 += tail * (1.0 - s.x) * (1.0 - s.x);
    CHECK(s.mean == doctest::Approx(m1).epsilon(1e-6));
    CHECK(s.variance == doctest::Approx(m2 - m1 * m1).epsilon(1e-5));
    CHECK(s.variance <= err2 * (1 + 1e-9));
    CHECK(err2 <= s.delta2);
  }
  // The closed-form mse drops the sign of the xi^2 tail term: it matches the
  // exact value at xi = 0 and for large xi but not in between.
  const ClippedEstimatorStats mid = clipped_estimator_stats(1.0 - 0.1, 100.0, 1.0);
  const double c = (1.0 - mid.x) / std::sqrt(mid.delta2);
  const double phi = 0.5 * std::erfc(-c / std::sqrt(2.0));
  const double exact_mse = (phi - c * std::exp(-0.5 * c * c) / std::sqrt(2.0 * M_PI) + c * c * (1.0 - phi)) * mid.delta2;
  CHECK(mid.mse < exact_mse);
  CHECK_THROWS_AS(clipped_estimator_stats(1.2, fn, 1.0), ModelError);
}

TEST_CASE("report round trip") {
  Philox4x32 g(13, 0);
  const FisherReport r = analyze_fim(random_spd(5, g));
  std::stringstream buf;
  write_report(buf, r);
  const FisherReport back = read_report(buf);
  CHECK(back.fim == r.fim);
  CHECK(back.inv_trace == r.inv_trace);
  CHECK(back.rank == r.rank);
  CHECK(back.effective_bandwidth == r.effective_bandwidth);
  std::stringstream junk("not a report\n");
  CHECK_THROWS(read_report(junk));
}
