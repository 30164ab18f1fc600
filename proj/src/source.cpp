#include "qimg/source.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace qimg {

SourceKind kind_of(const SourceModel& src) {
  return std::holds_alternative<ThermalSource>(src) ? SourceKind::Thermal : SourceKind::Spdc;
}

double correlation_width(const SourceModel& src) {
  return std::visit([](const auto& s) { return s.correlation_width; }, src);
}

SourceModel with_correlation_width(const SourceModel& src, double width) {
  if (kind_of(src) == SourceKind::Thermal) return ThermalSource{width};
  return SpdcSource{width};
}

void validate(const SourceModel& src) {
  if (!(correlation_width(src) > 0.0) || !std::isfinite(correlation_width(src))) {
    throw GeometryError("source: correlation width must be positive and finite");
  }
}

std::string_view to_string(SourceKind kind) {
  return kind == SourceKind::Thermal ? "thermal" : "spdc";
}

SourceKind parse_source_kind(std::string_view name) {
  if (name == "thermal") return SourceKind::Thermal;
  if (name == "spdc") return SourceKind::Spdc;
  throw ConfigError("unknown source kind '" + std::string(name) + "'");
}

double spdc_gaussian_width(double fwhm) { return fwhm / std::sqrt(std::numbers::ln2); }

double source_kernel(const SourceModel& src, Vec2 a, Vec2 b) {
  const Vec2 d = a - b;
  const double dist2 = d.x * d.x + d.y * d.y;
  if (const auto* t = std::get_if<ThermalSource>(&src)) {
    return std::exp(-dist2 / (t->correlation_width * t->correlation_width));
  }
  const double w = spdc_gaussian_width(std::get<SpdcSource>(src).correlation_width);
  return std::exp(-dist2 / (w * w));
}

}  // namespace qimg
