#include "qimg/phantoms.hpp"

#include <fstream>
#include <sstream>

namespace qimg {

namespace {

const char* const kDigit5[] = {
    ".......",
    ".#####.",
    ".#.....",
    ".#.....",
    ".####..",
    ".....#.",
    ".....#.",
    ".####..",
    ".......",
};

std::vector<double> bars(const std::vector<double>& levels, const std::vector<int>& widths) {
  std::vector<double> out;
  for (std::size_t i = 0; i < levels.size(); ++i) out.insert(out.end(), static_cast<std::size_t>(widths[i]), levels[i]);
  return out;
}

}  // namespace

ObjectModel three_slit(double pixel_size, int bar, int gap, int margin) {
  if (bar < 1 || gap < 0 || margin < 0) throw GeometryError("three-slit: invalid layout");
  std::vector<double> v(static_cast<std::size_t>(margin), 0.0);
  for (int s = 0; s < 3; ++s) {
    v.insert(v.end(), static_cast<std::size_t>(bar), 1.0);
    if (s < 2) v.insert(v.end(), static_cast<std::size_t>(gap), 0.0);
  }
  v.insert(v.end(), static_cast<std::size_t>(margin), 0.0);
  const double centre = 0.5 * (static_cast<double>(v.size()) - 1.0) * pixel_size;
  return ObjectModel::line(std::move(v), pixel_size, -centre);
}

ObjectModel make_phantom(std::string_view name, double pixel_size) {
  const auto centred = [&](std::vector<double> v) {
    const double c = 0.5 * (static_cast<double>(v.size()) - 1.0) * pixel_size;
    return ObjectModel::line(std::move(v), pixel_size, -c);
  };
  if (name == "three-slit") return three_slit(pixel_size, 2, 2, 2);
  if (name == "three-slit-24") return three_slit(pixel_size, 2, 2, 7);
  if (name == "binary-bars") {
    return centred(bars({0, 1, 0, 1, 0, 1, 0, 1, 0}, {2, 4, 3, 3, 2, 2, 2, 1, 5}));
  }
  if (name == "grey-bars") {
    return centred(bars({0, 0.9, 0.2, 0.6, 0.1, 1.0, 0.4, 0.75, 0}, {2, 4, 3, 3, 2, 2, 2, 1, 5}));
  }
  if (name == "digit-5") {
    const int ny = static_cast<int>(std::size(kDigit5));
    const int nx = 7;
    std::vector<double> v;
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) v.push_back(kDigit5[iy][ix] == '#' ? 1.0 : 0.0);
    }
    const Vec2 origin{-0.5 * (nx - 1) * pixel_size, -0.5 * (ny - 1) * pixel_size};
    return ObjectModel::grid(nx, ny, std::move(v), pixel_size, origin);
  }
  throw ConfigError("unknown phantom '" + std::string(name) + "'");
}

std::vector<std::string> phantom_names() {
  return {"three-slit", "three-slit-24", "binary-bars", "grey-bars", "digit-5"};
}

ObjectModel load_phantom_csv(const std::string& path, double pixel_size) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open phantom file " + path);
  std::vector<double> v;
  int nx = -1, ny = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    int count = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("phantom file " + path + ": bad value '" + cell + "'");
      }
      ++count;
    }
    if (nx >= 0 && count != nx) throw ConfigError("phantom file " + path + ": ragged rows");
    nx = count;
    ++ny;
  }
  if (ny == 0 || nx <= 0) throw ConfigError("phantom file " + path + " is empty");
  try {
    const Vec2 origin{-0.5 * (nx - 1) * pixel_size, ny == 1 ? 0.0 : -0.5 * (ny - 1) * pixel_size};
    return ny == 1 ? ObjectModel::line(std::move(v), pixel_size, origin.x)
                   : ObjectModel::grid(nx, ny, std::move(v), pixel_size, origin);
  } catch (const GeometryError& e) {
    throw ConfigError("phantom file " + path + ": " + e.what());
  }
}

}  // namespace qimg
