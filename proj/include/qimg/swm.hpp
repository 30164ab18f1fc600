#pragma once

// Sliding window reconstruction.
//
// A window is a rectangular core of pixels plus a border of `border` pixels
// on every side, clipped to the object. In the first-approximation pass every
// window is solved on its own with everything outside the window set to zero;
// the border values are thrown away. Refinement sweeps visit the windows in
// order, solve for the core only, keep the border at its current values and
// set everything outside the window to zero.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qimg/fisher.hpp"
#include "qimg/measurement.hpp"
#include "qimg/solver.hpp"

namespace qimg {

enum class WindowMode : std::uint8_t { FirstApprox = 0, Refine = 1 };

/// Rectangle of pixels [x0, x0 + nx) x [y0, y0 + ny).
struct Window {
  int x0 = 0;
  int y0 = 0;
  int nx = 1;
  int ny = 1;

  friend bool operator==(const Window&, const Window&) = default;
};

struct WindowPlan {
  WindowMode mode = WindowMode::FirstApprox;
  int object_nx = 0;
  int object_ny = 1;
  int core_x = 1;
  int core_y = 1;
  int border = 0;
  double margin = 0.0;  ///< detector-selection margin, um
  std::vector<Window> cores;

  /// Core dilated by the border and clipped to the object.
  Window full(const Window& core) const;
  /// Row-major pixel indices of a window.
  std::vector<int> pixels(const Window& w) const;
};

/// Cores at stride `stride` (0 means the core size) with the last core per
/// axis clamped to the object boundary.
WindowPlan plan_windows(int object_nx, int object_ny, int core_x, int core_y, int border, WindowMode mode,
                        double margin = 0.0, int stride = 0);

/// Detectors whose conjugate object point lies in the window dilated by margin.
std::vector<int> window_detectors(const Window& window, const ObjectModel& geometry, const ImagingSystem& sys,
                                  const DetectorGrid& detectors, double margin);

/// Indices of tuples whose detectors all belong to `detector_ids`.
std::vector<int> window_tuple_ids(const std::vector<DetectorTuple>& tuples, const std::vector<int>& detector_ids,
                                  int num_detectors);

/// Forward model and data at one pixelization.
struct SwmProblem {
  ObjectModel geometry;
  std::shared_ptr<const ForwardModel> model;
  std::vector<double> frequency;
  std::vector<double> weight;  ///< w_k
  Experiment experiment;
};

/// Weights 1 / max(f_k, 1/N); exact data (N = 0) uses a floor of 1e-9.
/// `transparent_sum` fixes P_S when the geometry differs from the one the
/// data were normalized on.
SwmProblem make_problem(const ObjectModel& geometry, const Experiment& experiment, const MeasurementSet& data,
                        WeightMode weighting = WeightMode::InverseFrequency,
                        std::optional<double> transparent_sum = std::nullopt);

/// sum_k w_k (p_k(x) - f_k)^2 over every tuple.
double global_residual(const SwmProblem& problem, std::span<const double> x);

/// One window subproblem: the free pixels, the tuples on detectors facing the
/// core (dilated by the plan margin) and the fixed
/// values of every other pixel.
struct WindowTask {
  Window core;
  Window full;
  std::vector<int> free_pixels;
  std::vector<int> core_pixels;
  std::vector<int> tuple_ids;
  std::vector<double> base;  ///< full-length object, free pixels overwritten
};

WindowTask make_window_task(const SwmProblem& problem, const WindowPlan& plan, const Window& core,
                            std::span<const double> current);

/// sum over the window's tuples of w_k (p_k - f_k)^2 with the free pixels set
/// to x_free.
double residual(const SwmProblem& problem, const WindowTask& task, std::span<const double> x_free);

SolveResult solve_window(const SwmProblem& problem, const WindowTask& task, std::span<const double> start,
                         const SolverConfig& cfg);

struct PassResult {
  std::vector<double> x;
  std::vector<double> window_residuals;
  int nonconverged = 0;
  int skipped = 0;  ///< windows without detectors
  double residual_before = 0.0;
  double residual_after = 0.0;
  double max_change = 0.0;
  bool aborted = false;
};

/// Independent windows started from `initial`; a pixel covered by several
/// cores takes the value from the first core in plan order.
PassResult first_approximation(const SwmProblem& problem, const WindowPlan& plan, const SolverConfig& cfg,
                               double initial = 0.5);

/// One sequential sweep. A window update is kept only when the global
/// residual does not grow (halving the step up to four times otherwise).
PassResult refine_sweep(const SwmProblem& problem, const WindowPlan& plan, std::span<const double> x_in,
                        const SolverConfig& cfg);

/// Direct box-constrained solve over every pixel at once.
SolveResult global_solve(const SwmProblem& problem, std::span<const double> start, const SolverConfig& cfg);

/// 1 - (x . y)^2 / (|x|^2 |y|^2). Throws ModelError for all-zero input.
double infidelity(std::span<const double> truth, std::span<const double> estimate);

struct ProbeConfig {
  int pixels = 16;        ///< per axis
  bool two_dimensional = false;
  int padding = 2;
  double cap_factor = 2.0;
  double value = 0.5;     ///< uniform probe transmission
  double tolerance = 0.01;  ///< bisection stop, relative to Delta_l
};

struct PixelSizeChoice {
  double pixel_size = 0.0;
  bool found = false;
  double min_ratio = 0.0;
};

/// Smallest pixel size in [Delta_l / 4, 8 Delta_l] whose uniform-probe FIM
/// passes the dominance test: doubling from the lower end, then bisection.
PixelSizeChoice choose_initial_pixel_size(const ImagingSystem& sys, const SourceModel& src, int order,
                                          double threshold = kDominanceThreshold, ProbeConfig probe = {});

struct PipelineConfig {
  int core = 0;     ///< per axis; 0 picks 4 (1D) or 3 (2D)
  int border = -1;  ///< < 0 uses effective bandwidth + 1
  double margin = -1.0;  ///< detectors kept around each core, um; < 0 uses Delta_l / 2
  int max_sweeps = 20;
  double sweep_tolerance = 1e-4;
  double dominance_threshold = kDominanceThreshold;
  double initial_value = 0.5;
  /// Coarsest pixel size as a multiple of the target; 0 chooses it from the
  /// dominance test.
  int initial_factor = 0;
  int refine_stride = 0;  ///< 0 = core size, 1 = one-pixel steps
  SolverConfig solver;
};

struct SweepRecord {
  int stage = 0;
  double pixel_size = 0.0;
  int sweep = 0;  ///< 0 is the first-approximation pass of stage 0
  double residual = 0.0;
  double max_change = 0.0;
};

struct ReconstructionResult {
  ObjectModel estimate;
  std::vector<double> window_residuals;  ///< last pass at the target size
  std::vector<SweepRecord> history;
  std::optional<double> infidelity;
  double initial_pixel_size = 0.0;
  int initial_factor = 1;
  std::vector<int> borders;  ///< per stage
  int nonconverged_windows = 0;
  std::vector<std::string> flags;
  double seconds = 0.0;
};

/// Multiscale pipeline at the dataset's pixel size.
ReconstructionResult reconstruct(const Dataset& dataset, const PipelineConfig& cfg);

/// Direct image from the diagonal outcomes: for each pixel the all-equal tuple
/// on its conjugate detector, taken to the power 1 / (2 n) and scaled to a
/// peak of 1. Pixels without such a tuple get 0.
ObjectModel naive_image(const Dataset& dataset);

/// Border rule: spatial effective bandwidth of the uniform-object FIM + 1.
int border_from_fim(const FisherReport& report, const ObjectModel& geometry, double eps = kBandwidthEpsilon);

}  // namespace qimg
