#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "qimg/forward.hpp"
#include "qimg/phantoms.hpp"
#include "qimg/random.hpp"
#include "qimg/tensor_io.hpp"

using namespace qimg;

namespace {

struct Setup {
  ImagingSystem sys = ImagingSystem::thermal_bench();
  ObjectModel obj;
  DetectorGrid dets;
  SourceModel src;
  TensorOptions opt;
  std::shared_ptr<const CoefficientTensor> tensor;

  Setup(ObjectModel o, SourceModel s, TensorOptions t = {}) : obj(std::move(o)), src(s), opt(t) {
    dets = DetectorGrid::conjugate_to(obj, sys, 2);
    tensor = std::make_shared<const CoefficientTensor>(CoefficientTensor::build(obj, sys, src, dets, opt));
  }
};

ObjectModel random_line(int m, double d, std::uint64_t seed) {
  Philox4x32 g(seed, 0);
  std::vector<double> v(static_cast<std::size_t>(m));
  for (double& x : v) x = g.uniform();
  return ObjectModel::line(v, d, -0.5 * (m - 1) * d);
}

// Midpoint-rule value of I(r_i, r_j) = int int K(s, s') x(s) x(s') h(s, r_i) h(s', r_j).
double dense_pair_correlation(const Setup& s, int i, int j, int per_pixel) {
  std::vector<double> pos, wx;
  for (std::size_t p = 0; p < s.obj.size(); ++p) {
    const double c = s.obj.center(static_cast<int>(p)).x;
    for (int k = 0; k < per_pixel; ++k) {
      pos.push_back(c + s.obj.pixel_size * ((k + 0.5) / per_pixel - 0.5));
      wx.push_back(s.obj.transmission[p] * s.obj.pixel_size / per_pixel);
    }
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < pos.size(); ++a) {
    const double ha = wx[a] * psf_eval({pos[a], 0}, s.dets.points[static_cast<std::size_t>(i)], s.sys);
    for (std::size_t b = 0; b < pos.size(); ++b) {
      const double hb = wx[b] * psf_eval({pos[b], 0}, s.dets.points[static_cast<std::size_t>(j)], s.sys);
      sum += source_kernel(s.src, {pos[a], 0}, {pos[b], 0}) * ha * hb;
    }
  }
  return sum;
}

std::vector<int> all_ids(const DetectorGrid& d) {
  std::vector<int> ids(d.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_CASE("gauss-legendre rule on the unit interval") {
  for (int q = 1; q <= 8; ++q) {
    const QuadratureRule r = gauss_legendre_unit(q);
    REQUIRE(r.nodes.size() == static_cast<std::size_t>(q));
    // Exact for polynomials up to degree 2q - 1: int_{-1/2}^{1/2} t^k dt.
    for (int k = 0; k < 2 * q; ++k) {
      double s = 0.0;
      for (int i = 0; i < q; ++i) s += r.weights[static_cast<std::size_t>(i)] * std::pow(r.nodes[static_cast<std::size_t>(i)], k);
      const double exact = k % 2 ? 0.0 : 2.0 * std::pow(0.5, k + 1) / (k + 1);
      CHECK(s == doctest::Approx(exact).epsilon(1e-12).scale(1.0));
    }
  }
}

TEST_CASE("thermal pair coefficient, small-pixel") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const double d = 20.0, wc = 40.0;
  const ObjectModel obj = ObjectModel::line(std::vector<double>(8, 1.0), d, -70.0);
  const DetectorGrid dets = DetectorGrid::conjugate_to(obj, sys, 2);
  const TensorOptions sp{PixelIntegration::SmallPixel, 1};
  const SourceModel src = ThermalSource{wc};
  const auto h = [&](int l, int i) { return psf_eval(obj.center(l), dets.points[static_cast<std::size_t>(i)], sys); };
  // l == m: kernel factor 1.
  CHECK(thermal_pair_coeff(3, 5, 2, 2, obj, sys, src, dets, sp).real() == doctest::Approx(d * d * h(2, 3) * h(2, 5)));
  // |s_l - s_m| = w_c gives a kernel factor of e^-1.
  const SourceModel src2 = ThermalSource{2 * d};
  const auto c = thermal_pair_coeff(3, 5, 2, 4, obj, sys, src2, dets, sp);
  CHECK(c.real() == doctest::Approx(std::exp(-1.0) * d * d * h(4, 3) * h(2, 5)));
  CHECK(std::abs(c.imag()) == 0.0);
  CHECK_THROWS_AS(thermal_pair_coeff(0, 0, 0, 0, obj, sys, SpdcSource{wc}, dets, sp), ModelError);

  // Tensor agrees with the direct evaluation.
  const CoefficientTensor t = CoefficientTensor::build(obj, sys, src, dets, sp);
  CHECK(std::abs(t.pair(1, 6, 3, 0) - thermal_pair_coeff(1, 6, 3, 0, obj, sys, src, dets, sp)) < 1e-12 * d * d);
}

TEST_CASE("thermal coefficient decays far from the conjugate point") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const double dl = sys.rayleigh_width();
  const double d = dl / 2;
  const ObjectModel obj = ObjectModel::line(std::vector<double>(44, 1.0), d);
  const DetectorGrid dets = DetectorGrid::conjugate_to(obj, sys, 0);
  const TensorOptions sp{PixelIntegration::SmallPixel, 1};
  const SourceModel src = ThermalSource{d};
  const double peak = std::abs(thermal_pair_coeff(2, 2, 2, 2, obj, sys, src, dets, sp));
  // Pixel 22 sits 10 Delta_l from detector 2's conjugate point.
  CHECK(std::abs(thermal_pair_coeff(2, 2, 22, 22, obj, sys, src, dets, sp)) < 1e-2 * peak);
  // Locality in pixel offsets beyond ~3 n0 (n0 = Delta_l / d = 2).
  const CoefficientTensor t = CoefficientTensor::build(obj, sys, src, dets, sp);
  double far = 0.0;
  for (int m = 0; m < 44; ++m) {
    for (int n = 0; n < 44; ++n) {
      if (std::min(std::abs(10 - m), std::abs(10 - n)) > 6) far = std::max(far, std::abs(t.pair(10, 10, m, n)));
    }
  }
  CHECK(far < 1e-2 * std::abs(t.pair(10, 10, 10, 10)));
}

TEST_CASE("pair correlation") {
  Setup s(random_line(8, 25.0, 3), ThermalSource{30.0});
  const std::vector<double> zero(8, 0.0);
  CHECK(std::abs(thermal_pair_correlation(2, 4, zero, *s.tensor)) == 0.0);
  std::vector<double> e1(8, 0.0);
  e1[1] = 1.0;
  CHECK(std::abs(thermal_pair_correlation(2, 4, e1, *s.tensor) - s.tensor->pair(2, 4, 1, 1)) < 1e-15);
  // Versus a dense midpoint rule over the object.
  Setup fine(s.obj, s.src, TensorOptions{PixelIntegration::GaussLegendre, 8});
  for (int i : {0, 3, 6, 9}) {
    const double dense = dense_pair_correlation(s, i, i, 40);
    CHECK(thermal_pair_correlation(i, i, s.obj.transmission, *fine.tensor).real() ==
          doctest::Approx(dense).epsilon(1e-3));
    CHECK(thermal_pair_correlation(i, i, s.obj.transmission, *s.tensor).real() ==
          doctest::Approx(dense).epsilon(2e-2));
  }
}

TEST_CASE("thermal correlation functions") {
  Setup s(random_line(7, 25.0, 5), ThermalSource{35.0});
  const auto& x = s.obj.transmission;
  const auto I = [&](int a, int b) { return thermal_pair_correlation(a, b, x, *s.tensor).real(); };
  const std::vector<int> one{4};
  CHECK(gn_thermal(one, x, *s.tensor) == doctest::Approx(I(4, 4)));
  const std::vector<int> two{3, 6};
  CHECK(gn_thermal(two, x, *s.tensor) == doctest::Approx(I(3, 3) * I(6, 6) + I(3, 6) * I(6, 3)));
  const std::vector<int> same{5, 5};
  CHECK(gn_thermal(same, x, *s.tensor) == doctest::Approx(2 * I(5, 5) * I(5, 5)));
  const int a = 2, b = 4, c = 7;
  const double perm3 = I(a, a) * I(b, b) * I(c, c) + I(a, a) * I(b, c) * I(c, b) + I(a, b) * I(b, a) * I(c, c) +
                       I(a, b) * I(b, c) * I(c, a) + I(a, c) * I(b, a) * I(c, b) + I(a, c) * I(b, b) * I(c, a);
  const std::vector<int> three{a, b, c};
  CHECK(gn_thermal(three, x, *s.tensor) == doctest::Approx(perm3));

  // Exchange symmetry.
  std::vector<int> four{1, 3, 3, 8};
  const double ref = gn_thermal(four, x, *s.tensor);
  CHECK(ref >= 0.0);
  while (std::next_permutation(four.begin(), four.end())) {
    CHECK(gn_thermal(four, x, *s.tensor) == doctest::Approx(ref).epsilon(1e-12));
  }
  const std::vector<int> five{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(gn_thermal(five, x, *s.tensor), ModelError);
  CHECK_THROWS_AS(gn_thermal(three, x, *s.tensor, 2), ModelError);
}

TEST_CASE("permanent") {
  Eigen::MatrixXcd m(3, 3);
  m << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  // Sum over the six permutations.
  CHECK(permanent(m).real() == doctest::Approx(1 * 5 * 9 + 1 * 6 * 8 + 2 * 4 * 9 + 2 * 6 * 7 + 3 * 4 * 8 + 3 * 5 * 7));
  Eigen::MatrixXcd one(1, 1);
  one << std::complex<double>(2, 1);
  CHECK(std::abs(permanent(one) - std::complex<double>(2, 1)) < 1e-15);
}

TEST_CASE("spdc coefficients and probabilities") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const ObjectModel obj = random_line(6, 25.0, 9);
  const DetectorGrid dets = DetectorGrid::conjugate_to(obj, sys, 2);
  const TensorOptions sp{PixelIntegration::SmallPixel, 1};

  // Nearly delta-correlated pairs: only m1 == m2 survives, proportional to h h.
  const SourceModel narrow = SpdcSource{0.5};
  const auto h = [&](int m, int j) { return psf_eval(obj.center(m), dets.points[static_cast<std::size_t>(j)], sys); };
  const double ratio = spdc_pair_coeff(2, 5, 3, 3, obj, sys, narrow, dets, sp).real() / (h(3, 2) * h(3, 5));
  CHECK(spdc_pair_coeff(2, 5, 1, 1, obj, sys, narrow, dets, sp).real() / (h(1, 2) * h(1, 5)) ==
        doctest::Approx(ratio));
  CHECK(std::abs(spdc_pair_coeff(2, 5, 1, 2, obj, sys, narrow, dets, sp)) < 1e-100);
  CHECK_THROWS_AS(spdc_pair_coeff(0, 0, 0, 0, obj, sys, ThermalSource{1.0}, dets, sp), ModelError);

  // Swap symmetry and a refined-quadrature oracle.
  const SourceModel src = SpdcSource{30.0};
  const TensorOptions q3{PixelIntegration::GaussLegendre, 3}, q6{PixelIntegration::GaussLegendre, 6};
  const auto a = spdc_pair_coeff(1, 6, 2, 4, obj, sys, src, dets, q3);
  const auto b = spdc_pair_coeff(6, 1, 4, 2, obj, sys, src, dets, q3);
  CHECK(std::abs(a - b) < 1e-14 * std::abs(a));
  for (int m1 = 0; m1 < 6; ++m1) {
    const auto c3 = spdc_pair_coeff(m1 + 2, m1 + 2, m1, m1, obj, sys, src, dets, q3);
    const auto c6 = spdc_pair_coeff(m1 + 2, m1 + 2, m1, m1, obj, sys, src, dets, q6);
    CHECK(std::abs(c3 - c6) < 1e-4 * std::abs(c6));
  }

  const CoefficientTensor t = CoefficientTensor::build(obj, sys, src, dets, q3);
  const std::vector<double> zero(6, 0.0);
  CHECK(spdc_probability(2, 4, zero, t) == 0.0);
  CHECK(spdc_probability(2, 4, obj.transmission, t) == doctest::Approx(spdc_probability(4, 2, obj.transmission, t)));
  CHECK(spdc_probability(2, 4, obj.transmission, t) >= 0.0);

  // Uniform object, narrow pairs: Phi_jk is the h h sum over pixels.
  const std::vector<double> ones(6, 1.0);
  const CoefficientTensor tn = CoefficientTensor::build(obj, sys, narrow, dets, sp);
  double phi = 0.0;
  for (int m = 0; m < 6; ++m) phi += h(m, 3) * h(m, 4);
  const double scale = tn.pair(3, 3, 0, 0).real() / (h(0, 3) * h(0, 3));
  CHECK(std::sqrt(spdc_probability(3, 4, ones, tn)) == doctest::Approx(std::abs(scale * phi)));
}

TEST_CASE("tuples") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const ObjectModel obj = ObjectModel::line(std::vector<double>(6, 1.0), 20.0);
  const DetectorGrid dets = DetectorGrid::conjugate_to(obj, sys, 0);
  const std::vector<int> ids = all_ids(dets);
  // Combinations with repetition: C(6 + n - 1, n).
  CHECK(form_tuples(dets, ids, 1, 0.0).size() == 6);
  CHECK(form_tuples(dets, ids, 2, 0.0).size() == 21);
  CHECK(form_tuples(dets, ids, 3, 0.0).size() == 56);
  // A cap of one pitch keeps only neighbours.
  const auto capped = form_tuples(dets, ids, 2, dets.pitch);
  CHECK(capped.size() == 6 + 5);
  CHECK_THROWS_AS(form_tuples(dets, ids, 5, 0.0), ModelError);
}

TEST_CASE("normalization") {
  Setup s(random_line(6, 25.0, 11), ThermalSource{30.0});
  const auto tuples = form_tuples(s.dets, all_ids(s.dets), 2, 0.0);
  const ForwardModel model(s.tensor, tuples);
  const std::vector<double> ones(6, 1.0), zeros(6, 0.0);
  const NormalizedProbabilities one = model.probabilities(ones);
  CHECK(one.no_counts == doctest::Approx(0.0).scale(1.0));
  CHECK(std::accumulate(one.probability.begin(), one.probability.end(), 0.0) == doctest::Approx(1.0));
  const NormalizedProbabilities zero = model.probabilities(zeros);
  CHECK(zero.no_counts == 1.0);
  for (double p : zero.probability) CHECK(p == 0.0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ObjectModel o = random_line(6, 25.0, 100 + seed);
    const NormalizedProbabilities r = model.probabilities(o.transmission);
    CHECK(r.no_counts >= 0.0);
    CHECK(r.no_counts <= 1.0);
    CHECK(std::accumulate(r.probability.begin(), r.probability.end(), r.no_counts) == doctest::Approx(1.0));
  }

  const std::vector<double> raw{1.0, 2.0}, transparent{1.0, 1.0};
  CHECK_THROWS_AS(normalize_probabilities(raw, transparent), ModelError);
  const std::vector<double> none{0.0, 0.0};
  CHECK_THROWS_AS(normalize_probabilities(none, none), ModelError);
}

TEST_CASE("probabilities are nondecreasing in each transmission") {
  // Every pixel-detector distance stays inside the central PSF lobe, so all
  // kernels are nonnegative. With sidelobes in play the property can fail.
  const double d = 0.15 * ImagingSystem::thermal_bench().rayleigh_width();
  Setup s(random_line(6, d, 21), ThermalSource{2.0 * d});
  const auto tuples = form_tuples(s.dets, all_ids(s.dets), 2, 0.0);
  const ForwardModel model(s.tensor, tuples);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ObjectModel o = random_line(6, d, 300 + seed);
    const ProbabilityJacobian jac = model.jacobian(o.transmission);
    CHECK(jac.gradient.minCoeff() >= -1e-12 * jac.gradient.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("probability gradients") {
  Setup s(random_line(6, 25.0, 31), ThermalSource{30.0});
  const auto t1 = form_tuples(s.dets, all_ids(s.dets), 1, 0.0);
  const ForwardModel m1(s.tensor, t1);
  const std::vector<double> zeros(6, 0.0);
  CHECK(probability_gradient(3, zeros, m1).norm() == 0.0);

  // Single transmitting pixel: dp/dx1 = 2 D^(ii)(1,1) x1 / P_S.
  std::vector<double> e(6, 0.0);
  e[1] = 0.7;
  const int i = 3;
  const double expect = 2.0 * s.tensor->pair(i, i, 1, 1).real() * 0.7 / m1.transparent_sum();
  CHECK(probability_gradient(i, e, m1)(1) == doctest::Approx(expect));

  // Central differences.
  for (int order = 1; order <= 3; ++order) {
    const auto tuples = form_tuples(s.dets, all_ids(s.dets), order, 0.0);
    const ForwardModel model(s.tensor, tuples);
    const std::vector<double> x = s.obj.transmission;
    const ProbabilityJacobian jac = model.jacobian(x);
    const double h = 1e-5;
    double worst = 0.0;
    for (int m = 0; m < 6; ++m) {
      std::vector<double> xp = x, xm = x;
      xp[static_cast<std::size_t>(m)] += h;
      xm[static_cast<std::size_t>(m)] -= h;
      const auto pp = model.probabilities(xp).probability, pm = model.probabilities(xm).probability;
      Eigen::VectorXd fd(static_cast<Eigen::Index>(pp.size()));
      for (std::size_t k = 0; k < pp.size(); ++k) fd(static_cast<Eigen::Index>(k)) = (pp[k] - pm[k]) / (2 * h);
      worst = std::max(worst, (fd - jac.gradient.col(m)).norm() / jac.gradient.col(m).norm());
    }
    CHECK(worst < 1e-6);
    CHECK(jac.no_counts_gradient.isApprox(-jac.gradient.colwise().sum().transpose()));
  }
}

TEST_CASE("forward model rejects inconsistent tuples") {
  Setup s(random_line(4, 25.0, 41), ThermalSource{30.0});
  std::vector<DetectorTuple> mixed{make_detector_tuple(std::vector<int>{1}), make_detector_tuple(std::vector<int>{1, 2})};
  CHECK_THROWS_AS(ForwardModel(s.tensor, mixed), ModelError);
  Setup p(random_line(4, 25.0, 41), SpdcSource{30.0});
  CHECK_THROWS_AS(ForwardModel(p.tensor, form_tuples(p.dets, all_ids(p.dets), 3, 0.0)), ModelError);
}

TEST_CASE("tensor file round trip") {
  Setup s(random_line(5, 25.0, 51), SpdcSource{30.0});
  std::stringstream buf;
  write_tensor(buf, *s.tensor, 2);
  const std::string bytes = buf.str();
  int order = 0;
  std::stringstream in(bytes);
  const CoefficientTensor back = read_tensor(in, &order);
  CHECK(order == 2);
  CHECK(back.source_kind() == SourceKind::Spdc);
  CHECK(back.weights() == s.tensor->weights());
  CHECK(back.kernel() == s.tensor->kernel());
  CHECK(back.subpoint_pixel() == s.tensor->subpoint_pixel());
  CHECK(back.options().quadrature_points == 3);

  std::string bad = bytes;
  bad[bad.size() - 20] ^= 0x40;
  std::stringstream corrupt(bad);
  CHECK_THROWS_AS(read_tensor(corrupt), ModelError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::stringstream magic(wrong);
  CHECK_THROWS_AS(read_tensor(magic), ModelError);

  std::ostringstream csv;
  dump_tensor_csv(csv, *s.tensor);
  const std::string text = csv.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  const long d = s.tensor->num_detectors(), m = s.tensor->num_pixels();
  CHECK(lines == 1 + d * d * m * m);
  CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cULL);
}
