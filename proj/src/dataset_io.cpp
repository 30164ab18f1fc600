#include "qimg/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

namespace qimg {

using nlohmann::json;

namespace {

template <class T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("dataset: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: bad field '") + key + "': " + e.what());
  }
}

const char* integration_name(PixelIntegration p) {
  return p == PixelIntegration::SmallPixel ? "small-pixel" : "gauss-legendre";
}

PixelIntegration parse_integration(const std::string& s) {
  if (s == "small-pixel") return PixelIntegration::SmallPixel;
  if (s == "gauss-legendre") return PixelIntegration::GaussLegendre;
  throw ConfigError("unknown pixel integration '" + s + "'");
}

}  // namespace

json system_to_json(const ImagingSystem& sys) {
  return {{"object_distance_mm", sys.object_distance_mm()},
          {"image_distance_mm", sys.image_distance_mm()},
          {"lens_radius_mm", sys.lens_radius_mm()},
          {"wavelength_nm", sys.wavelength_nm()}};
}

ImagingSystem system_from_json(const json& j) {
  try {
    return ImagingSystem(field<double>(j, "object_distance_mm"), field<double>(j, "image_distance_mm"),
                         field<double>(j, "lens_radius_mm"), field<double>(j, "wavelength_nm"));
  } catch (const GeometryError& e) {
    throw ConfigError(e.what());
  }
}

json dataset_to_json(const Dataset& ds) {
  const Experiment& ex = ds.experiment;
  json points = json::array();
  for (const Vec2& p : ex.detectors.points) points.push_back({p.x, p.y});
  json object = {{"nx", ds.geometry.nx},
                 {"ny", ds.geometry.ny},
                 {"pixel_size_um", ds.geometry.pixel_size},
                 {"origin_um", {ds.geometry.origin.x, ds.geometry.origin.y}}};
  if (ds.has_truth) object["truth"] = ds.geometry.transmission;

  const MeasurementSet& m = ds.data;
  json tuples = json::array();
  for (const DetectorTuple& t : m.tuples) tuples.push_back(std::vector<int>(t.ids().begin(), t.ids().end()));
  json meas = {{"events", m.events},
               {"seed", m.seed},
               {"tuples", tuples},
               {"frequency", m.frequency},
               {"no_counts_frequency", m.no_counts_frequency}};
  if (!m.counts.empty()) {
    meas["counts"] = m.counts;
    meas["no_counts_count"] = m.no_counts_count;
  }
  if (!m.probability.empty()) {
    meas["probability"] = m.probability;
    meas["no_counts_probability"] = m.no_counts_probability;
  }
  return {{"format", "qimg-dataset"},
          {"version", 1},
          {"system", system_to_json(ex.system)},
          {"source", {{"kind", std::string(to_string(kind_of(ex.source)))},
                      {"correlation_width_um", correlation_width(ex.source)}}},
          {"object", object},
          {"detectors", {{"nx", ex.detectors.nx},
                         {"ny", ex.detectors.ny},
                         {"pitch_um", ex.detectors.pitch},
                         {"points_um", points}}},
          {"model", {{"integration", integration_name(ex.options.integration)},
                     {"quadrature_points", ex.options.quadrature_points},
                     {"order", ex.order},
                     {"tuple_cap_um", ex.tuple_cap}}},
          {"measurement", meas}};
}

Dataset dataset_from_json(const json& j) {
  if (!j.is_object() || field<std::string>(j, "format") != "qimg-dataset") {
    throw ConfigError("dataset: not a qimg dataset document");
  }
  if (field<int>(j, "version") != 1) throw ConfigError("dataset: unsupported version");
  Dataset ds;
  Experiment& ex = ds.experiment;
  ex.system = system_from_json(field<json>(j, "system"));

  const json src = field<json>(j, "source");
  const SourceKind kind = parse_source_kind(field<std::string>(src, "kind"));
  const double wc = field<double>(src, "correlation_width_um");
  ex.source = kind == SourceKind::Thermal ? SourceModel{ThermalSource{wc}} : SourceModel{SpdcSource{wc}};

  const json obj = field<json>(j, "object");
  const auto origin = field<std::vector<double>>(obj, "origin_um");
  if (origin.size() != 2) throw ConfigError("dataset: origin_um needs two values");
  ds.geometry.nx = field<int>(obj, "nx");
  ds.geometry.ny = field<int>(obj, "ny");
  ds.geometry.pixel_size = field<double>(obj, "pixel_size_um");
  ds.geometry.origin = {origin[0], origin[1]};
  ds.has_truth = obj.contains("truth");
  if (ds.has_truth) {
    ds.geometry.transmission = field<std::vector<double>>(obj, "truth");
  } else if (ds.geometry.nx > 0 && ds.geometry.ny > 0) {
    ds.geometry.transmission.assign(static_cast<std::size_t>(ds.geometry.nx) * ds.geometry.ny, 0.0);
  }

  const json det = field<json>(j, "detectors");
  ex.detectors.nx = field<int>(det, "nx");
  ex.detectors.ny = field<int>(det, "ny");
  ex.detectors.pitch = field<double>(det, "pitch_um");
  for (const auto& p : field<std::vector<std::vector<double>>>(det, "points_um")) {
    if (p.size() != 2) throw ConfigError("dataset: detector points need two coordinates");
    ex.detectors.points.push_back({p[0], p[1]});
  }

  const json model = field<json>(j, "model");
  ex.options.integration = parse_integration(field<std::string>(model, "integration"));
  ex.options.quadrature_points = field<int>(model, "quadrature_points");
  ex.order = field<int>(model, "order");
  ex.tuple_cap = field<double>(model, "tuple_cap_um");

  const json meas = field<json>(j, "measurement");
  MeasurementSet& m = ds.data;
  m.order = ex.order;
  m.events = field<std::uint64_t>(meas, "events");
  m.seed = field<std::uint64_t>(meas, "seed");
  for (const auto& t : field<std::vector<std::vector<int>>>(meas, "tuples")) {
    if (static_cast<int>(t.size()) != ex.order) throw ConfigError("dataset: tuple of the wrong order");
    m.tuples.push_back(make_detector_tuple(t));
  }
  m.frequency = field<std::vector<double>>(meas, "frequency");
  m.no_counts_frequency = field<double>(meas, "no_counts_frequency");
  if (meas.contains("counts")) {
    m.counts = field<std::vector<std::uint64_t>>(meas, "counts");
    m.no_counts_count = field<std::uint64_t>(meas, "no_counts_count");
  }
  if (meas.contains("probability")) {
    m.probability = field<std::vector<double>>(meas, "probability");
    m.no_counts_probability = field<double>(meas, "no_counts_probability");
  }

  try {
    validate(ex.source);
    ds.geometry.validate();
    ex.detectors.validate();
    m.validate();
    for (const DetectorTuple& t : m.tuples) {
      for (int d : t.ids()) {
        if (d < 0 || d >= static_cast<int>(ex.detectors.size())) throw ModelError("tuple detector out of range");
      }
    }
  } catch (const std::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  return ds;
}

void write_dataset(std::ostream& out, const Dataset& ds) { out << dataset_to_json(ds).dump(1) << '\n'; }

Dataset read_dataset(std::istream& in) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: parse error: ") + e.what());
  }
  return dataset_from_json(j);
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return read_dataset(in);
}

}  // namespace qimg
