#include "qimg/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "qimg/phantoms.hpp"

namespace qimg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads keys from one JSON object and rejects the ones nobody asked for.
class Block {
 public:
  Block(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("config: unknown key '" + name_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

SamplingMode parse_sampling(const std::string& s) {
  if (s == "multinomial") return SamplingMode::Multinomial;
  if (s == "poisson") return SamplingMode::Poisson;
  throw ConfigError("config: unknown sampling mode '" + s + "'");
}

const char* sampling_name(SamplingMode m) { return m == SamplingMode::Multinomial ? "multinomial" : "poisson"; }

WeightMode parse_weighting(const std::string& s) {
  if (s == "inverse-frequency") return WeightMode::InverseFrequency;
  if (s == "uniform") return WeightMode::Uniform;
  throw ConfigError("config: unknown weighting '" + s + "'");
}

const char* weighting_name(WeightMode m) {
  return m == WeightMode::InverseFrequency ? "inverse-frequency" : "uniform";
}

SweepMetric parse_metric(const std::string& s) {
  if (s == "crb") return SweepMetric::Crb;
  if (s == "infidelity") return SweepMetric::Infidelity;
  throw ConfigError("config: unknown sweep metric '" + s + "'");
}

const char* metric_name(SweepMetric m) { return m == SweepMetric::Crb ? "crb" : "infidelity"; }

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

void read_solver(const json& j, SolverConfig& s) {
  Block b(j, "run.solver");
  std::string weighting = weighting_name(s.weighting);
  b.get("max_iterations", s.max_iterations);
  b.get("gradient_tolerance", s.gradient_tolerance);
  b.get("step_tolerance", s.step_tolerance);
  b.get("weighting", weighting);
  b.finish();
  s.weighting = parse_weighting(weighting);
}

void read_window(const json& j, PipelineConfig& p) {
  Block b(j, "run.window");
  b.get("core", p.core);
  b.get("border", p.border);
  b.get("margin_um", p.margin);
  b.get("max_sweeps", p.max_sweeps);
  b.get("sweep_tolerance", p.sweep_tolerance);
  b.get("dominance_threshold", p.dominance_threshold);
  b.get("initial_value", p.initial_value);
  b.get("initial_factor", p.initial_factor);
  b.get("refine_stride", p.refine_stride);
  b.finish();
}

}  // namespace

std::string OutputBlock::path(const std::string& name) const {
  if (fs::path(name).is_absolute()) return name;
  return (fs::path(dir) / name).string();
}

void RunConfig::validate() const {
  const auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  const GeometryConfig& g = geometry;
  need(g.object_distance_mm > 0.0 && g.image_distance_mm > 0.0, "distances must be positive");
  need(g.lens_radius_mm > 0.0 && g.wavelength_nm > 0.0, "lens radius and wavelength must be positive");
  need(g.detector_pitch_um >= 0.0, "detector pitch must be >= 0");
  need(g.detector_padding >= 0 && g.detector_padding <= 64, "detector padding out of range");
  need(g.integration == "auto" || g.integration == "small-pixel" || g.integration == "gauss-legendre",
       "integration must be auto, small-pixel or gauss-legendre");
  need(g.quadrature_points >= 1 && g.quadrature_points <= 16, "quadrature points out of range");
  need(source.correlation_width_um >= 0.0 && source.correlation_width_px > 0.0, "correlation width must be positive");
  need(object.pixel_size_um >= 0.0 && object.pixel_size_rayleigh > 0.0, "pixel size must be positive");
  need(!object.phantom.empty() || !object.file.empty(), "object needs a phantom or a file");
  if (!object.file.empty()) need(fs::exists(object.file), "object file does not exist");
  need(run.order >= 1 && run.order <= kMaxOrder, "order must be 1..4");
  need(source.kind == SourceKind::Thermal || run.order == 2, "SPDC runs use order 2");
  run.solver.validate();
  const PipelineConfig& p = run.pipeline;
  need(p.core >= 0 && p.max_sweeps >= 1 && p.sweep_tolerance > 0.0, "window settings out of range");
  need(p.initial_value >= 0.0 && p.initial_value <= 1.0, "initial value must lie in [0, 1]");
  need(p.initial_factor >= 0 && (p.initial_factor & (p.initial_factor - 1)) == 0,
       "initial factor must be 0 or a power of two");
  need(p.refine_stride >= 0 && p.dominance_threshold > 0.0, "window settings out of range");
  need(analysis.uniform_value <= 1.0, "uniform value must be <= 1");
  need(analysis.bandwidth_epsilon > 0.0 && analysis.bandwidth_epsilon < 1.0, "bandwidth epsilon must be in (0, 1)");
  need(sweep.min_factor > 0.0 && sweep.max_factor > sweep.min_factor, "sweep range must be increasing");
  need(sweep.points >= 5, "sweep needs at least five points");
  need(!sweep.seeds.empty(), "sweep needs at least one seed");
  need(bias.fisher_events > 0.0 && bias.points >= 2 && bias.monte_carlo_trials >= 0, "bias settings out of range");
  if (!fit.input.empty()) need(fs::exists(fit.input), "fit input does not exist");
  need(fit.separations >= 5 && fit.noise >= 0.0, "fit settings out of range");
}

RunConfig config_from_json(const json& j, const std::string& base_dir) {
  RunConfig c;
  Block top(j, "config");
  std::string schema;
  int version = 0;
  top.get("schema", schema);
  top.get("version", version);
  if (schema != "qimg-run") throw ConfigError("config: schema must be \"qimg-run\"");
  if (version != 1) throw ConfigError("config: unsupported version");

  if (const json* g = top.child("geometry")) {
    Block b(*g, "geometry");
    b.get("object_distance_mm", c.geometry.object_distance_mm);
    b.get("image_distance_mm", c.geometry.image_distance_mm);
    b.get("lens_radius_mm", c.geometry.lens_radius_mm);
    b.get("wavelength_nm", c.geometry.wavelength_nm);
    b.get("detector_pitch_um", c.geometry.detector_pitch_um);
    b.get("detector_padding", c.geometry.detector_padding);
    b.get("tuple_cap_factor", c.geometry.tuple_cap_factor);
    b.get("integration", c.geometry.integration);
    b.get("quadrature_points", c.geometry.quadrature_points);
    b.finish();
  }
  if (const json* s = top.child("source")) {
    Block b(*s, "source");
    std::string kind = std::string(to_string(c.source.kind));
    b.get("kind", kind);
    if (b.has("correlation_width_um") && b.has("correlation_width_px")) {
      throw ConfigError("config: give source.correlation_width_um or _px, not both");
    }
    b.get("correlation_width_um", c.source.correlation_width_um);
    b.get("correlation_width_px", c.source.correlation_width_px);
    b.finish();
    try {
      c.source.kind = parse_source_kind(kind);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (const json* o = top.child("object")) {
    Block b(*o, "object");
    if (b.has("pixel_size_um") && b.has("pixel_size_rayleigh")) {
      throw ConfigError("config: give object.pixel_size_um or pixel_size_rayleigh, not both");
    }
    b.get("phantom", c.object.phantom);
    b.get("file", c.object.file);
    b.get("pixel_size_um", c.object.pixel_size_um);
    b.get("pixel_size_rayleigh", c.object.pixel_size_rayleigh);
    b.finish();
    c.object.file = resolve(c.object.file, base_dir);
  }
  if (const json* r = top.child("run")) {
    Block b(*r, "run");
    std::string sampling = sampling_name(c.run.sampling);
    b.get("order", c.run.order);
    b.get("events", c.run.events);
    b.get("seed", c.run.seed);
    b.get("sampling", sampling);
    if (const json* s = b.child("solver")) read_solver(*s, c.run.solver);
    if (const json* w = b.child("window")) read_window(*w, c.run.pipeline);
    b.finish();
    c.run.sampling = parse_sampling(sampling);
  }
  if (const json* a = top.child("analysis")) {
    Block b(*a, "analysis");
    b.get("uniform_value", c.analysis.uniform_value);
    b.get("bandwidth_epsilon", c.analysis.bandwidth_epsilon);
    b.get("dominance_threshold", c.analysis.dominance_threshold);
    b.finish();
  }
  if (const json* s = top.child("sweep")) {
    Block b(*s, "sweep");
    std::string metric = metric_name(c.sweep.metric);
    b.get("metric", metric);
    b.get("min_factor", c.sweep.min_factor);
    b.get("max_factor", c.sweep.max_factor);
    b.get("points", c.sweep.points);
    b.get("seeds", c.sweep.seeds);
    b.finish();
    c.sweep.metric = parse_metric(metric);
  }
  if (const json* s = top.child("bias")) {
    Block b(*s, "bias");
    b.get("fisher_events", c.bias.fisher_events);
    b.get("points", c.bias.points);
    b.get("monte_carlo_trials", c.bias.monte_carlo_trials);
    b.finish();
  }
  if (const json* s = top.child("fit")) {
    Block b(*s, "fit");
    b.get("input", c.fit.input);
    b.get("separations", c.fit.separations);
    b.get("noise", c.fit.noise);
    b.finish();
    c.fit.input = resolve(c.fit.input, base_dir);
  }
  if (const json* s = top.child("outputs")) {
    Block b(*s, "outputs");
    b.get("dir", c.outputs.dir);
    b.get("dataset", c.outputs.dataset);
    b.get("estimate", c.outputs.estimate);
    b.get("reconstruction", c.outputs.reconstruction);
    b.get("fim_report", c.outputs.fim_report);
    b.get("sweep", c.outputs.sweep);
    b.get("bias", c.outputs.bias);
    b.get("fit", c.outputs.fit);
    b.finish();
    c.outputs.dir = resolve(c.outputs.dir, base_dir);
  }
  top.finish();
  c.run.pipeline.solver = c.run.solver;
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  const PipelineConfig& p = c.run.pipeline;
  json object = {{"phantom", c.object.phantom}};
  if (!c.object.file.empty()) object["file"] = c.object.file;
  if (c.object.pixel_size_um > 0.0) {
    object["pixel_size_um"] = c.object.pixel_size_um;
  } else {
    object["pixel_size_rayleigh"] = c.object.pixel_size_rayleigh;
  }
  json source = {{"kind", std::string(to_string(c.source.kind))}};
  if (c.source.correlation_width_um > 0.0) {
    source["correlation_width_um"] = c.source.correlation_width_um;
  } else {
    source["correlation_width_px"] = c.source.correlation_width_px;
  }
  return {{"schema", "qimg-run"},
          {"version", 1},
          {"geometry",
           {{"object_distance_mm", c.geometry.object_distance_mm},
            {"image_distance_mm", c.geometry.image_distance_mm},
            {"lens_radius_mm", c.geometry.lens_radius_mm},
            {"wavelength_nm", c.geometry.wavelength_nm},
            {"detector_pitch_um", c.geometry.detector_pitch_um},
            {"detector_padding", c.geometry.detector_padding},
            {"tuple_cap_factor", c.geometry.tuple_cap_factor},
            {"integration", c.geometry.integration},
            {"quadrature_points", c.geometry.quadrature_points}}},
          {"source", source},
          {"object", object},
          {"run",
           {{"order", c.run.order},
            {"events", c.run.events},
            {"seed", c.run.seed},
            {"sampling", sampling_name(c.run.sampling)},
            {"solver",
             {{"max_iterations", c.run.solver.max_iterations},
              {"gradient_tolerance", c.run.solver.gradient_tolerance},
              {"step_tolerance", c.run.solver.step_tolerance},
              {"weighting", weighting_name(c.run.solver.weighting)}}},
            {"window",
             {{"core", p.core},
              {"border", p.border},
              {"margin_um", p.margin},
              {"max_sweeps", p.max_sweeps},
              {"sweep_tolerance", p.sweep_tolerance},
              {"dominance_threshold", p.dominance_threshold},
              {"initial_value", p.initial_value},
              {"initial_factor", p.initial_factor},
              {"refine_stride", p.refine_stride}}}}},
          {"analysis",
           {{"uniform_value", c.analysis.uniform_value},
            {"bandwidth_epsilon", c.analysis.bandwidth_epsilon},
            {"dominance_threshold", c.analysis.dominance_threshold}}},
          {"sweep",
           {{"metric", metric_name(c.sweep.metric)},
            {"min_factor", c.sweep.min_factor},
            {"max_factor", c.sweep.max_factor},
            {"points", c.sweep.points},
            {"seeds", c.sweep.seeds}}},
          {"bias",
           {{"fisher_events", c.bias.fisher_events},
            {"points", c.bias.points},
            {"monte_carlo_trials", c.bias.monte_carlo_trials}}},
          {"fit", {{"input", c.fit.input}, {"separations", c.fit.separations}, {"noise", c.fit.noise}}},
          {"outputs",
           {{"dir", c.outputs.dir},
            {"dataset", c.outputs.dataset},
            {"estimate", c.outputs.estimate},
            {"reconstruction", c.outputs.reconstruction},
            {"fim_report", c.outputs.fim_report},
            {"sweep", c.outputs.sweep},
            {"bias", c.outputs.bias},
            {"fit", c.outputs.fit}}}};
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path().string());
}

ImagingSystem make_system(const RunConfig& cfg) {
  const GeometryConfig& g = cfg.geometry;
  try {
    return ImagingSystem(g.object_distance_mm, g.image_distance_mm, g.lens_radius_mm, g.wavelength_nm);
  } catch (const GeometryError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ObjectModel make_object(const RunConfig& cfg) {
  const ImagingSystem sys = make_system(cfg);
  const double d = cfg.object.pixel_size_um > 0.0 ? cfg.object.pixel_size_um
                                                  : cfg.object.pixel_size_rayleigh * sys.rayleigh_width();
  ObjectModel obj = cfg.object.file.empty() ? make_phantom(cfg.object.phantom, d)
                                            : load_phantom_csv(cfg.object.file, d);
  obj.validate();
  return obj;
}

SourceModel make_source(const RunConfig& cfg, const ObjectModel& obj) {
  const double wc = cfg.source.correlation_width_um > 0.0 ? cfg.source.correlation_width_um
                                                          : cfg.source.correlation_width_px * obj.pixel_size;
  if (cfg.source.kind == SourceKind::Thermal) return ThermalSource{wc};
  return SpdcSource{wc};
}

Experiment make_run_experiment(const RunConfig& cfg, const ObjectModel& obj) {
  const GeometryConfig& g = cfg.geometry;
  const ImagingSystem sys = make_system(cfg);
  Experiment ex = make_experiment(obj, sys, make_source(cfg, obj), cfg.run.order, g.detector_padding,
                                  g.tuple_cap_factor);
  if (g.integration == "small-pixel") {
    ex.options.integration = PixelIntegration::SmallPixel;
  } else if (g.integration == "gauss-legendre") {
    ex.options.integration = PixelIntegration::GaussLegendre;
  }
  ex.options.quadrature_points = g.quadrature_points;
  if (g.detector_pitch_um > 0.0) {
    // Regular grid centred on the image of the object centre.
    const double m = sys.magnification();
    const double p = g.detector_pitch_um;
    const auto count = [&](int n) {
      return static_cast<int>(std::ceil(n * obj.pixel_size * m / p)) + 2 * g.detector_padding;
    };
    const int nx = count(obj.nx);
    const int ny = obj.is_1d() ? 1 : count(obj.ny);
    const Vec2 mid = obj.center(0) + Vec2{0.5 * (obj.nx - 1) * obj.pixel_size, 0.5 * (obj.ny - 1) * obj.pixel_size};
    const Vec2 c = sys.image_of(mid);
    const Vec2 first{c.x - 0.5 * (nx - 1) * p, obj.is_1d() ? c.y : c.y - 0.5 * (ny - 1) * p};
    ex.detectors = DetectorGrid::regular(nx, ny, p, first);
  }
  return ex;
}

}  // namespace qimg
