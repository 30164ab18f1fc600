#pragma once

// JSON dataset files:
//
//   { "format": "qimg-dataset", "version": 1,
//     "system":    {"object_distance_mm", "image_distance_mm", "lens_radius_mm", "wavelength_nm"},
//     "source":    {"kind": "thermal"|"spdc", "correlation_width_um"},
//     "object":    {"nx", "ny", "pixel_size_um", "origin_um": [x, y], "truth": [...] (optional)},
//     "detectors": {"nx", "ny", "pitch_um", "points_um": [[x, y], ...]},
//     "model":     {"integration": "small-pixel"|"gauss-legendre", "quadrature_points", "order", "tuple_cap_um"},
//     "measurement": {"events", "seed", "tuples": [[...], ...], "frequency": [...],
//                     "no_counts_frequency", "counts": [...], "no_counts_count",
//                     "probability": [...], "no_counts_probability"} }
//
// Doubles use the shortest round-trip representation, so a write/read cycle
// is exact.

#include <iosfwd>
#include <string>

#include "json.hpp"

#include "qimg/measurement.hpp"

namespace qimg {

nlohmann::json system_to_json(const ImagingSystem& sys);
ImagingSystem system_from_json(const nlohmann::json& j);

nlohmann::json dataset_to_json(const Dataset& ds);
/// Throws ConfigError on a malformed document.
Dataset dataset_from_json(const nlohmann::json& j);

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace qimg
