#include "doctest.h"

#include <cmath>
#include <numbers>

#include <boost/math/special_functions/bessel.hpp>

#include "qimg/optics.hpp"
#include "qimg/phantoms.hpp"
#include "qimg/source.hpp"

using namespace qimg;

namespace {

// First positive root of J1 by bisection on the library Bessel function.
double j1_root() {
  double lo = 3.0, hi = 4.5;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (boost::math::cyl_bessel_j(1, lo) * boost::math::cyl_bessel_j(1, mid) <= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("bench geometry") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  CHECK(sys.rayleigh_width() == doctest::Approx(234e3 * 0.405 / (2 * 850.0)).epsilon(1e-14));
  CHECK(sys.rayleigh_width() == doctest::Approx(55.7).epsilon(1e-3));
  CHECK(sys.magnification() == doctest::Approx(454.0 / 234.0).epsilon(1e-15));
  CHECK(sys.object_distance_mm() == 234.0);
  CHECK(sys.wavelength_nm() == 405.0);
}

TEST_CASE("rayleigh width scaling") {
  const ImagingSystem a(234, 454, 0.85, 405), b(234, 454, 1.7, 405), c(234, 454, 1e6, 405);
  CHECK(b.rayleigh_width() == doctest::Approx(a.rayleigh_width() / 2));
  CHECK(c.rayleigh_width() < 1e-4);
  CHECK_THROWS_AS(ImagingSystem(0, 454, 0.85, 405), GeometryError);
  CHECK_THROWS_AS(ImagingSystem(234, 454, -1, 405), GeometryError);
}

TEST_CASE("psf values") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const Vec2 r{100.0, 0.0};
  const Vec2 s0 = sys.conjugate_of(r);
  CHECK(psf_eval(s0, r, sys) == doctest::Approx(1.0));
  // Argument x = 2 pi R u / (lambda s_o) = pi u / Delta_l.
  const double u = j1_root() * sys.rayleigh_width() / std::numbers::pi;
  CHECK(std::abs(psf_eval(s0 + Vec2{u, 0}, r, sys)) < 1e-12);
  CHECK(jinc(0.0) == 1.0);
  CHECK(jinc(1e-9) == doctest::Approx(1.0));
}

TEST_CASE("psf symmetry, bound and locality") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const double dl = sys.rayleigh_width();
  const Vec2 r{-30.0, 12.0};
  const Vec2 s0 = sys.conjugate_of(r);
  for (double t = 0.01; t < 20.0; t += 0.173) {
    const Vec2 off{t * dl * 0.6, t * dl * 0.8};
    const double a = psf_eval(s0 + off, r, sys);
    CHECK(a == doctest::Approx(psf_eval(s0 - off, r, sys)).epsilon(1e-12));
    CHECK(std::abs(a) < 1.0);
    if (t > 10.0) CHECK(std::abs(a) < 1e-2);
  }
}

TEST_CASE("subdivide and coarsen") {
  const ObjectModel o = ObjectModel::line({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}, 10.0);
  const ObjectModel s = subdivide(o, 2);
  REQUIRE(s.size() == 20);
  for (std::size_t j = 0; j < 20; ++j) CHECK(s.transmission[j] == o.transmission[j / 2]);
  CHECK(s.pixel_size == 5.0);
  // Child centres straddle the parent centre.
  CHECK(0.5 * (s.center(0).x + s.center(1).x) == doctest::Approx(o.center(0).x));
  CHECK(subdivide(o, 1).transmission == o.transmission);
  CHECK(coarsen(s, 2).transmission == o.transmission);

  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[static_cast<std::size_t>(i)] = (i % 5) / 4.0;
  const ObjectModel g = ObjectModel::grid(4, 4, v, 3.0);
  const ObjectModel g2 = subdivide(g, 2);
  REQUIRE(g2.nx == 8);
  REQUIRE(g2.ny == 8);
  double a = 0.0, b = 0.0;
  for (double x : g.transmission) a += x * g.pixel_measure();
  for (double x : g2.transmission) b += x * g2.pixel_measure();
  CHECK(a == doctest::Approx(b));
  CHECK(coarsen(g2, 2).transmission == g.transmission);
}

TEST_CASE("object validation") {
  CHECK_THROWS_AS(ObjectModel::line({0.5, 1.2}, 1.0).validate(), GeometryError);
  CHECK_THROWS_AS(ObjectModel::line({0.5, -0.1}, 1.0).validate(), GeometryError);
  CHECK_THROWS_AS(ObjectModel::line({0.5}, 0.0).validate(), GeometryError);
  CHECK_NOTHROW(ObjectModel::line({0.0, 1.0}, 1.0).validate());
  CHECK_THROWS_AS(subdivide(ObjectModel::line({0.5}, 1.0), 0), GeometryError);
}

TEST_CASE("conjugate detectors image the pixel centres") {
  const ImagingSystem sys = ImagingSystem::thermal_bench();
  const ObjectModel o = make_phantom("three-slit", 20.0);
  const DetectorGrid d = DetectorGrid::conjugate_to(o, sys, 2);
  REQUIRE(d.size() == o.size() + 4);
  for (std::size_t j = 0; j < o.size(); ++j) {
    const Vec2 back = sys.conjugate_of(d.points[j + 2]);
    CHECK(back.x == doctest::Approx(o.center(static_cast<int>(j)).x));
  }
  CHECK(d.pitch == doctest::Approx(20.0 * sys.magnification()));
}

TEST_CASE("source kernels") {
  const ThermalSource t{10.0};
  CHECK(source_kernel(t, {0, 0}, {0, 0}) == 1.0);
  CHECK(source_kernel(t, {0, 0}, {10, 0}) == doctest::Approx(std::exp(-1.0)));
  const SpdcSource s{10.0};
  // Lambda(s, -s) drops to one half at |s| = w_c / 2.
  CHECK(source_kernel(s, {5, 0}, {-5, 0}) == doctest::Approx(0.5));
  CHECK(spdc_gaussian_width(10.0) == doctest::Approx(10.0 / std::sqrt(std::log(2.0))));
  CHECK(parse_source_kind("thermal") == SourceKind::Thermal);
  CHECK(parse_source_kind("spdc") == SourceKind::Spdc);
  CHECK_THROWS(parse_source_kind("laser"));
  CHECK_THROWS(validate(SourceModel{ThermalSource{0.0}}));
  CHECK(correlation_width(with_correlation_width(s, 3.0)) == 3.0);
  CHECK(kind_of(with_correlation_width(s, 3.0)) == SourceKind::Spdc);
}

TEST_CASE("phantoms") {
  for (const std::string& name : phantom_names()) {
    const ObjectModel o = make_phantom(name, 10.0);
    CHECK_NOTHROW(o.validate());
  }
  const ObjectModel t = make_phantom("three-slit", 10.0);
  CHECK(t.transmission == std::vector<double>{0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0});
  CHECK(make_phantom("three-slit-24", 10.0).size() == 24);
  CHECK(make_phantom("digit-5", 10.0).nx == 7);
  CHECK(make_phantom("digit-5", 10.0).ny == 9);
  CHECK_THROWS_AS(make_phantom("nope", 10.0), ConfigError);
}
