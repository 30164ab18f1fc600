#pragma once

// Imaging geometry, the jinc point-spread function and pixelated objects.
//
// Units: every length handed out by these types is in micrometres. The
// ImagingSystem constructor takes the lab units (mm for distances and the
// lens radius, nm for the wavelength) and converts once.

#include <array>
#include <cstddef>
#include <vector>

#include "qimg/errors.hpp"

namespace qimg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double k) { return {a.x * k, a.y * k}; }
inline Vec2 operator*(double k, Vec2 a) { return a * k; }
double norm(Vec2 a);

/// Single-lens imaging system. Immutable after construction.
class ImagingSystem {
 public:
  ImagingSystem(double object_distance_mm, double image_distance_mm,
                double lens_radius_mm, double wavelength_nm);

  /// Pseudo-thermal bench: s_o = 234 mm, s_i = 454 mm, 1.7 mm pinhole, 405 nm.
  static ImagingSystem thermal_bench();

  double object_distance() const { return object_distance_; }
  double image_distance() const { return image_distance_; }
  double lens_radius() const { return lens_radius_; }
  double wavelength() const { return wavelength_; }
  double magnification() const { return image_distance_ / object_distance_; }
  /// PSF width s_o * lambda / (2 R).
  double rayleigh_width() const;
  /// Object-plane point that the lens images onto r.
  Vec2 conjugate_of(Vec2 r) const { return r * (-object_distance_ / image_distance_); }
  /// Image-plane point conjugate to the object point s.
  Vec2 image_of(Vec2 s) const { return s * (-image_distance_ / object_distance_); }

  /// Constructor arguments, kept verbatim so serialization round-trips.
  double object_distance_mm() const { return lab_[0]; }
  double image_distance_mm() const { return lab_[1]; }
  double lens_radius_mm() const { return lab_[2]; }
  double wavelength_nm() const { return lab_[3]; }

 private:
  double object_distance_;
  double image_distance_;
  double lens_radius_;
  double wavelength_;
  std::array<double, 4> lab_;
};

double rayleigh_width(const ImagingSystem& sys);

/// 2 J1(x) / x with the continuous value 1 at the origin.
double jinc(double x);

/// Amplitude PSF h(s, r) between object point s and image point r. The
/// quadratic phase factor is taken as 1, so the value is real.
double psf_eval(Vec2 s, Vec2 r, const ImagingSystem& sys);

/// Pixel grid in the object plane holding real amplitude transmissions.
/// Pixels are axis-aligned squares (segments when ny == 1) of side
/// pixel_size; index j = iy * nx + ix.
struct ObjectModel {
  int nx = 0;
  int ny = 1;
  double pixel_size = 0.0;
  Vec2 origin;  ///< centre of pixel (0, 0)
  std::vector<double> transmission;

  static ObjectModel line(std::vector<double> values, double pixel_size, double left_center = 0.0);
  static ObjectModel grid(int nx, int ny, std::vector<double> values, double pixel_size,
                          Vec2 origin = {});
  /// Uniform object of the same geometry.
  ObjectModel filled(double value) const;

  bool is_1d() const { return ny == 1; }
  std::size_t size() const { return transmission.size(); }
  int index(int ix, int iy) const { return iy * nx + ix; }
  Vec2 center(int j) const;
  /// Pixel measure: length for lines, area for grids.
  double pixel_measure() const { return is_1d() ? pixel_size : pixel_size * pixel_size; }
  /// Throws GeometryError when the dimensions, size or transmissions are invalid.
  void validate() const;
};

/// Splits every pixel into factor (per axis) children that inherit the parent
/// transmission.
ObjectModel subdivide(const ObjectModel& obj, int factor);

/// Inverse of subdivide for exact multiples: averages each block of children.
ObjectModel coarsen(const ObjectModel& obj, int factor);

/// Detector points in the image plane.
struct DetectorGrid {
  std::vector<Vec2> points;
  double pitch = 0.0;
  int nx = 0;
  int ny = 1;

  static DetectorGrid regular(int nx, int ny, double pitch, Vec2 first);
  /// One detector imaged onto every pixel centre, extended by `padding`
  /// pixels on each side of every axis.
  static DetectorGrid conjugate_to(const ObjectModel& obj, const ImagingSystem& sys, int padding);

  std::size_t size() const { return points.size(); }
  void validate() const;
};

}  // namespace qimg
