#pragma once

// Synthetic data, the Gaussian-speckle Monte Carlo oracle, correlation-width
// fits and width sweeps.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "qimg/measurement.hpp"
#include "qimg/random.hpp"

namespace qimg {

enum class SamplingMode : std::uint8_t {
  Multinomial = 0,  ///< one draw of N trials over all outcomes incl. no-counts
  Poisson = 1,      ///< independent Poisson counts with mean N p_k
};

/// Normalized model probabilities for `truth`, then one sample of N events.
/// events == 0 stores the exact probabilities as frequencies.
Dataset synthesize_dataset(const ObjectModel& truth, const Experiment& experiment, std::uint64_t events,
                           std::uint64_t seed, SamplingMode mode = SamplingMode::Multinomial);

/// Multinomial draw by sequential conditional binomials. Throws ModelError
/// when the probabilities are negative or do not sum to one.
std::vector<std::uint64_t> sample_multinomial(std::span<const double> p, std::uint64_t n, Philox4x32& rng);

struct OracleEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  bool regularized = false;  ///< +1e-10 I was added to the covariance
};

struct OracleOptions {
  int subpixel = 1;  ///< field samples per pixel per axis
};

/// Monte Carlo estimate of <prod_t I(r_t)> for circular Gaussian fields with
/// covariance exp(-|s - s'|^2 / w_c^2) on the object grid, propagated through
/// the transmission and the PSF in the small-pixel form.
OracleEstimate speckle_oracle_gn(const ObjectModel& obj, const ImagingSystem& sys, double correlation_width,
                                 std::span<const Vec2> points, int samples, std::uint64_t seed,
                                 OracleOptions options = {});

struct G2Sample {
  double separation = 0.0;  ///< |r1 - r2| in the image plane, um
  double value = 0.0;
};

struct WidthFit {
  double correlation_width = 0.0;
  double amplitude = 0.0;
  bool converged = false;
};

/// Least-squares fit of G2 = A exp(-2 |r1 - r2|^2 / (m w_c)^2).
WidthFit fit_correlation_width(std::span<const G2Sample> samples, double magnification);

/// Exact map G2 = amplitude exp(-2 s^2 / (m w_c)^2) at `count` separations
/// evenly spaced over [0, max_separation], each value multiplied by
/// (1 + noise * z) with z standard normal.
std::vector<G2Sample> gaussian_g2_map(double correlation_width, double magnification, double amplitude,
                                      int count, double max_separation, double noise, std::uint64_t seed);

/// Sample moments of y' = min(y, 1), y ~ Normal(x, 1 / (F11 N)).
struct ClippedMonteCarlo {
  double mean = 0.0;
  double variance = 0.0;  ///< unbiased sample variance
  double mse = 0.0;       ///< mean of (y' - x)^2
  int trials = 0;
};
ClippedMonteCarlo clipped_estimator_monte_carlo(double x, double f11, double n_events, int trials,
                                                std::uint64_t seed, std::uint64_t stream = 0);

enum class SweepMetric : std::uint8_t { Crb = 0, Infidelity = 1 };

struct SweepPoint {
  double width = 0.0;
  double metric = 0.0;
  double std_error = 0.0;
  bool singular = false;
  int rank = 0;
};

struct SweepResult {
  SweepMetric metric = SweepMetric::Crb;
  std::vector<SweepPoint> points;
  int argmin = -1;  ///< over non-singular points
  bool interior_minimum = false;
  /// Metric nonincreasing toward small widths; singular points count as +inf
  /// and a sweep without any finite point is not monotone.
  bool monotone = false;

  double argmin_width() const { return argmin >= 0 ? points[static_cast<std::size_t>(argmin)].width : 0.0; }
};

struct SweepConfig {
  SweepMetric metric = SweepMetric::Crb;
  std::uint64_t events = 1000000;
  std::vector<std::uint64_t> seeds{1};
  double relative_tolerance = 1e-6;
};

struct PipelineConfig;

/// Tr F^-1 / N (or mean reconstruction infidelity) over a grid of widths for
/// the experiment's source kind. The grid must be strictly increasing with at
/// least five points.
SweepResult sweep_width(const ObjectModel& phantom, const Experiment& experiment, std::span<const double> widths,
                        const SweepConfig& cfg, const PipelineConfig* pipeline = nullptr);

/// Recomputes argmin / interior / monotone flags from the points.
void classify_sweep(SweepResult& result, double relative_tolerance);

void write_sweep_csv(std::ostream& out, const SweepResult& result);

}  // namespace qimg
