#include "qimg/optics.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <utility>

namespace qimg {

double norm(Vec2 a) { return std::hypot(a.x, a.y); }

ImagingSystem::ImagingSystem(double object_distance_mm, double image_distance_mm,
                             double lens_radius_mm, double wavelength_nm)
    : object_distance_(object_distance_mm * 1e3),
      image_distance_(image_distance_mm * 1e3),
      lens_radius_(lens_radius_mm * 1e3),
      wavelength_(wavelength_nm * 1e-3),
      lab_{object_distance_mm, image_distance_mm, lens_radius_mm, wavelength_nm} {
  if (!(object_distance_ > 0.0) || !(image_distance_ > 0.0) || !(lens_radius_ > 0.0) ||
      !(wavelength_ > 0.0)) {
    throw GeometryError("imaging system: distances, lens radius and wavelength must be positive");
  }
}

ImagingSystem ImagingSystem::thermal_bench() { return ImagingSystem(234.0, 454.0, 0.85, 405.0); }

double ImagingSystem::rayleigh_width() const {
  return object_distance_ * wavelength_ / (2.0 * lens_radius_);
}

double rayleigh_width(const ImagingSystem& sys) { return sys.rayleigh_width(); }

double jinc(double x) {
  const double ax = std::abs(x);
  if (ax < 1e-4) {
    // 2 J1(x)/x = 1 - x^2/8 + x^4/192 - ...
    const double x2 = ax * ax;
    return 1.0 - x2 / 8.0 + x2 * x2 / 192.0;
  }
  return 2.0 * std::cyl_bessel_j(1.0, ax) / ax;
}

double psf_eval(Vec2 s, Vec2 r, const ImagingSystem& sys) {
  // R * omega / (s_o * c) = 2 pi R / (lambda s_o)
  const double scale =
      2.0 * std::numbers::pi * sys.lens_radius() / (sys.wavelength() * sys.object_distance());
  const Vec2 offset = s + r * (sys.object_distance() / sys.image_distance());
  return jinc(scale * norm(offset));
}

ObjectModel ObjectModel::line(std::vector<double> values, double pixel_size, double left_center) {
  ObjectModel obj;
  obj.nx = static_cast<int>(values.size());
  obj.ny = 1;
  obj.pixel_size = pixel_size;
  obj.origin = {left_center, 0.0};
  obj.transmission = std::move(values);
  obj.validate();
  return obj;
}

ObjectModel ObjectModel::grid(int nx, int ny, std::vector<double> values, double pixel_size,
                              Vec2 origin) {
  ObjectModel obj;
  obj.nx = nx;
  obj.ny = ny;
  obj.pixel_size = pixel_size;
  obj.origin = origin;
  obj.transmission = std::move(values);
  obj.validate();
  return obj;
}

ObjectModel ObjectModel::filled(double value) const {
  ObjectModel out = *this;
  out.transmission.assign(size(), value);
  return out;
}

Vec2 ObjectModel::center(int j) const {
  const int ix = j % nx;
  const int iy = j / nx;
  return {origin.x + ix * pixel_size, origin.y + iy * pixel_size};
}

void ObjectModel::validate() const {
  if (nx <= 0 || ny <= 0) throw GeometryError("object: pixel counts must be positive");
  if (!(pixel_size > 0.0)) throw GeometryError("object: pixel size must be positive");
  if (transmission.size() != static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)) {
    throw GeometryError("object: transmission count does not match nx*ny");
  }
  for (double v : transmission) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw GeometryError("object: transmissions must lie in [0, 1], got " + std::to_string(v));
    }
  }
}

ObjectModel subdivide(const ObjectModel& obj, int factor) {
  if (factor < 1) throw GeometryError("subdivide: factor must be >= 1");
  if (factor == 1) return obj;
  const int fy = obj.is_1d() ? 1 : factor;
  ObjectModel out;
  out.nx = obj.nx * factor;
  out.ny = obj.ny * fy;
  out.pixel_size = obj.pixel_size / factor;
  const double shift = -0.5 * obj.pixel_size + 0.5 * out.pixel_size;
  out.origin = {obj.origin.x + shift, obj.is_1d() ? obj.origin.y : obj.origin.y + shift};
  out.transmission.resize(static_cast<std::size_t>(out.nx) * out.ny);
  for (int iy = 0; iy < out.ny; ++iy) {
    for (int ix = 0; ix < out.nx; ++ix) {
      out.transmission[out.index(ix, iy)] = obj.transmission[obj.index(ix / factor, iy / fy)];
    }
  }
  return out;
}

ObjectModel coarsen(const ObjectModel& obj, int factor) {
  if (factor < 1) throw GeometryError("coarsen: factor must be >= 1");
  const int fy = obj.is_1d() ? 1 : factor;
  if (obj.nx % factor != 0 || obj.ny % fy != 0) {
    throw GeometryError("coarsen: dimensions are not multiples of the factor");
  }
  ObjectModel out;
  out.nx = obj.nx / factor;
  out.ny = obj.ny / fy;
  out.pixel_size = obj.pixel_size * factor;
  const double shift = 0.5 * out.pixel_size - 0.5 * obj.pixel_size;
  out.origin = {obj.origin.x + shift, obj.is_1d() ? obj.origin.y : obj.origin.y + shift};
  out.transmission.assign(static_cast<std::size_t>(out.nx) * out.ny, 0.0);
  const double inv = 1.0 / (factor * fy);
  for (int iy = 0; iy < obj.ny; ++iy) {
    for (int ix = 0; ix < obj.nx; ++ix) {
      out.transmission[out.index(ix / factor, iy / fy)] += obj.transmission[obj.index(ix, iy)] * inv;
    }
  }
  return out;
}

DetectorGrid DetectorGrid::regular(int nx, int ny, double pitch, Vec2 first) {
  DetectorGrid g;
  g.nx = nx;
  g.ny = ny;
  g.pitch = pitch;
  g.points.reserve(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) g.points.push_back({first.x + ix * pitch, first.y + iy * pitch});
  }
  g.validate();
  return g;
}

DetectorGrid DetectorGrid::conjugate_to(const ObjectModel& obj, const ImagingSystem& sys,
                                        int padding) {
  if (padding < 0) throw GeometryError("detector padding must be >= 0");
  const int nx = obj.nx + 2 * padding;
  const int ny = obj.is_1d() ? 1 : obj.ny + 2 * padding;
  DetectorGrid g;
  g.nx = nx;
  g.ny = ny;
  g.pitch = obj.pixel_size * sys.magnification();
  g.points.reserve(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Vec2 s{obj.origin.x + (ix - padding) * obj.pixel_size,
                   obj.is_1d() ? obj.origin.y : obj.origin.y + (iy - padding) * obj.pixel_size};
      g.points.push_back(sys.image_of(s));
    }
  }
  g.validate();
  return g;
}

void DetectorGrid::validate() const {
  if (!(pitch > 0.0)) throw GeometryError("detector grid: pitch must be positive");
  if (points.empty()) throw GeometryError("detector grid: no detectors");
  std::set<std::pair<double, double>> seen;
  for (const Vec2& p : points) {
    if (!seen.emplace(p.x, p.y).second) throw GeometryError("detector grid: duplicate detector point");
  }
}

}  // namespace qimg
