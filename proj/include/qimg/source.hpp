#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "qimg/optics.hpp"

namespace qimg {

/// Pseudo-thermal light: first-order field correlation
/// K(s, s') = exp(-|s - s'|^2 / w_c^2).
struct ThermalSource {
  double correlation_width = 0.0;  ///< w_c, um
};

/// SPDC twin photons with Gaussian joint-position amplitude
/// Lambda(s1, s2) = exp(-|s1 - s2|^2 / w^2). correlation_width is the FWHM
/// of Lambda(s, -s) = exp(-4 s^2 / w^2), which gives w = w_c / sqrt(ln 2).
struct SpdcSource {
  double correlation_width = 0.0;  ///< w_c, um
};

using SourceModel = std::variant<ThermalSource, SpdcSource>;

enum class SourceKind : std::uint8_t { Thermal = 0, Spdc = 1 };

SourceKind kind_of(const SourceModel& src);
double correlation_width(const SourceModel& src);
SourceModel with_correlation_width(const SourceModel& src, double width);
void validate(const SourceModel& src);

std::string_view to_string(SourceKind kind);
SourceKind parse_source_kind(std::string_view name);

/// Gaussian width w of Lambda for a given FWHM of Lambda(s, -s).
double spdc_gaussian_width(double fwhm);

/// K(a, b) for thermal sources, Lambda(a, b) for SPDC.
double source_kernel(const SourceModel& src, Vec2 a, Vec2 b);

}  // namespace qimg
