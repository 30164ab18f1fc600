#pragma once

// Bundled test objects. They are stylized stand-ins, not measured objects;
// the pixel maps are mirrored in data/phantoms/.

#include <string>
#include <string_view>
#include <vector>

#include "qimg/optics.hpp"

namespace qimg {

/// Three transmitting slits of `bar` pixels separated by `gap` opaque pixels,
/// with `margin` opaque pixels on each side.
ObjectModel three_slit(double pixel_size, int bar = 2, int gap = 2, int margin = 2);

/// "three-slit" (14 px), "three-slit-24" (24 px), "binary-bars" (24 px),
/// "grey-bars" (24 px), "digit-5" (7 x 9 grid). Throws ConfigError for
/// unknown names.
ObjectModel make_phantom(std::string_view name, double pixel_size);
std::vector<std::string> phantom_names();

/// Comma-separated transmissions, one text row per object row. A single row
/// gives a line object.
ObjectModel load_phantom_csv(const std::string& path, double pixel_size);

}  // namespace qimg
