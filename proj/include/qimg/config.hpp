#pragma once

// Run configuration documents (JSON, schema "qimg-run", version 1). Apart
// from "schema" and "version" every block and key is optional and falls back
// to the defaults below; an unknown key anywhere is a ConfigError.
//
//   { "schema": "qimg-run", "version": 1,
//     "geometry": {"object_distance_mm", "image_distance_mm", "lens_radius_mm", "wavelength_nm",
//                  "detector_pitch_um", "detector_padding", "tuple_cap_factor",
//                  "integration": "auto"|"small-pixel"|"gauss-legendre", "quadrature_points"},
//     "source":   {"kind", "correlation_width_um" | "correlation_width_px"},
//     "object":   {"phantom" | "file", "pixel_size_um" | "pixel_size_rayleigh"},
//     "run":      {"order", "events", "seed", "sampling", "solver": {...}, "window": {...}},
//     "analysis": {"uniform_value", "bandwidth_epsilon", "dominance_threshold"},
//     "sweep":    {"metric", "min_factor", "max_factor", "points", "seeds"},
//     "bias":     {"fisher_events", "points", "monte_carlo_trials"},
//     "fit":      {"input", "separations", "noise"},
//     "outputs":  {"dir", "dataset", "estimate", "reconstruction", "fim_report", "sweep", "bias", "fit"} }

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "qimg/measurement.hpp"
#include "qimg/sim.hpp"
#include "qimg/swm.hpp"

namespace qimg {

struct GeometryConfig {
  double object_distance_mm = 234.0;
  double image_distance_mm = 454.0;
  double lens_radius_mm = 0.85;
  double wavelength_nm = 405.0;
  double detector_pitch_um = 0.0;  ///< image plane; 0 puts one detector on every pixel image
  int detector_padding = 2;        ///< extra detectors per side
  double tuple_cap_factor = 2.0;   ///< in units of Delta_l * m; <= 0 disables
  std::string integration = "auto";
  int quadrature_points = 3;
};

struct SourceConfig {
  SourceKind kind = SourceKind::Thermal;
  double correlation_width_um = 0.0;  ///< used when > 0
  double correlation_width_px = 1.5;  ///< in object pixels otherwise
};

struct ObjectConfig {
  std::string phantom = "three-slit";
  std::string file;  ///< CSV, overrides the phantom when set
  double pixel_size_um = 0.0;        ///< used when > 0
  double pixel_size_rayleigh = 0.5;  ///< d / Delta_l otherwise
};

struct RunBlock {
  int order = 2;
  std::uint64_t events = 1000000;  ///< 0 stores exact probabilities
  std::uint64_t seed = 1;
  SamplingMode sampling = SamplingMode::Multinomial;
  SolverConfig solver;
  PipelineConfig pipeline;  ///< solver field mirrors `solver`
};

struct AnalysisConfig {
  double uniform_value = -1.0;  ///< < 0 analyses the object itself
  double bandwidth_epsilon = kBandwidthEpsilon;
  double dominance_threshold = kDominanceThreshold;
};

struct SweepBlock {
  SweepMetric metric = SweepMetric::Crb;
  double min_factor = 0.25;  ///< w_c grid start, in pixels
  double max_factor = 4.0;
  int points = 17;           ///< log-spaced
  std::vector<std::uint64_t> seeds{1};
};

struct BiasBlock {
  double fisher_events = 50.0;  ///< F_11 N
  int points = 11;              ///< x grid over [0, 1]
  int monte_carlo_trials = 0;   ///< 0 skips the Monte Carlo columns
};

struct FitBlock {
  std::string input;  ///< CSV "separation_um,g2"; empty synthesizes a map from the source
  int separations = 25;
  double noise = 0.0;  ///< relative multiplicative noise for synthesized maps
};

struct OutputBlock {
  std::string dir = ".";
  std::string dataset = "dataset.json";
  std::string estimate = "estimate.csv";
  std::string reconstruction = "reconstruction.json";
  std::string fim_report = "fim-report.txt";
  std::string sweep = "sweep.csv";
  std::string bias = "bias.csv";
  std::string fit = "fit.json";

  /// dir joined with name unless name is absolute.
  std::string path(const std::string& name) const;
};

struct RunConfig {
  GeometryConfig geometry;
  SourceConfig source;
  ObjectConfig object;
  RunBlock run;
  AnalysisConfig analysis;
  SweepBlock sweep;
  BiasBlock bias;
  FitBlock fit;
  OutputBlock outputs;

  /// Range checks and referenced-file existence; throws ConfigError.
  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or out-of-range values.
/// Relative file paths are resolved against `base_dir`.
RunConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

ImagingSystem make_system(const RunConfig& cfg);
/// Truth object at the configured pixel size.
ObjectModel make_object(const RunConfig& cfg);
SourceModel make_source(const RunConfig& cfg, const ObjectModel& obj);
Experiment make_run_experiment(const RunConfig& cfg, const ObjectModel& obj);

}  // namespace qimg
