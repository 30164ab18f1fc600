#include "qimg/measurement.hpp"

#include <cmath>
#include <numeric>

namespace qimg {

void MeasurementSet::validate() const {
  if (order < 1 || order > kMaxOrder) throw ModelError("measurement: unsupported order");
  for (const DetectorTuple& t : tuples) {
    if (t.order != order) throw ModelError("measurement: tuple order mismatch");
  }
  const std::size_t k = tuples.size();
  if (!probability.empty()) {
    if (probability.size() != k) throw ModelError("measurement: probability count mismatch");
    double sum = no_counts_probability;
    for (double p : probability) {
      if (!(p >= 0.0)) throw ModelError("measurement: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9 || no_counts_probability < 0.0 || no_counts_probability > 1.0) {
      throw ModelError("measurement: probabilities do not sum to one");
    }
  }
  if (frequency.size() != k) throw ModelError("measurement: frequency count mismatch");
  double fsum = 0.0;
  for (double f : frequency) {
    if (!(f >= 0.0)) throw ModelError("measurement: negative frequency");
    fsum += f;
  }
  if (fsum > 1.0 + 1e-9) throw ModelError("measurement: frequencies sum above one");
  if (!counts.empty()) {
    if (counts.size() != k) throw ModelError("measurement: count table size mismatch");
    const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), no_counts_count);
    if (events != 0 && total != events) throw ModelError("measurement: counts do not add up to N");
  }
}

Experiment make_experiment(const ObjectModel& geometry, const ImagingSystem& sys, const SourceModel& src,
                           int order, int padding, double cap_factor) {
  Experiment ex{sys, src, DetectorGrid::conjugate_to(geometry, sys, padding),
                TensorOptions::defaults_for(geometry), order,
                cap_factor > 0.0 ? cap_factor * sys.rayleigh_width() * sys.magnification() : 0.0};
  return ex;
}

std::vector<DetectorTuple> experiment_tuples(const Experiment& ex) {
  std::vector<int> ids(ex.detectors.size());
  std::iota(ids.begin(), ids.end(), 0);
  return form_tuples(ex.detectors, ids, ex.order, ex.tuple_cap);
}

}  // namespace qimg
