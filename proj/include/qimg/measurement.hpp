#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qimg/forward.hpp"

namespace qimg {

/// Detector tuples with their probabilities and/or observed frequencies.
/// Index k runs over tuples; the no-counts outcome is kept separately.
struct MeasurementSet {
  int order = 0;
  std::vector<DetectorTuple> tuples;
  std::vector<double> probability;  ///< model p_k, empty when unknown
  double no_counts_probability = 0.0;
  std::vector<double> frequency;    ///< f_k
  double no_counts_frequency = 0.0;
  std::vector<std::uint64_t> counts;  ///< empty for exact data
  std::uint64_t no_counts_count = 0;
  std::uint64_t events = 0;  ///< N; 0 means exact probabilities
  std::uint64_t seed = 0;

  bool exact() const { return events == 0; }
  /// Throws ModelError when the sizes or the probability/frequency
  /// invariants do not hold.
  void validate() const;
};

/// Everything needed to rebuild the forward model for a measurement.
struct Experiment {
  ImagingSystem system = ImagingSystem::thermal_bench();
  SourceModel source = ThermalSource{};
  DetectorGrid detectors;
  TensorOptions options;
  int order = 2;
  /// Pairwise image-plane diameter cap for tuples, um; <= 0 disables.
  double tuple_cap = 0.0;
};

/// Conjugate detectors (padding pixels each side) and a tuple cap of
/// cap_factor * Delta_l * m.
Experiment make_experiment(const ObjectModel& geometry, const ImagingSystem& sys, const SourceModel& src,
                           int order, int padding = 2, double cap_factor = 2.0);

/// Tuples over every detector of the experiment.
std::vector<DetectorTuple> experiment_tuples(const Experiment& ex);

struct Dataset {
  Experiment experiment;
  ObjectModel geometry;  ///< pixel layout; transmissions hold the truth when known
  bool has_truth = false;
  MeasurementSet data;
};

}  // namespace qimg
