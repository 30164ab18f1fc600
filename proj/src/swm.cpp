#include "qimg/swm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <limits>

namespace qimg {

namespace {

std::vector<int> axis_positions(int m, int core, int stride) {
  std::vector<int> out;
  int p = 0;
  for (; p + core <= m; p += stride) out.push_back(p);
  if (out.empty() || out.back() + core < m) out.push_back(m - core);
  return out;
}

std::vector<double> gather(std::span<const double> x, const std::vector<int>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(x[static_cast<std::size_t>(i)]);
  return out;
}

double weighted_sum(const SwmProblem& pb, const std::vector<int>& tuple_ids, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t r = 0; r < tuple_ids.size(); ++r) {
    const auto k = static_cast<std::size_t>(tuple_ids[r]);
    const double e = p[r] - pb.frequency[k];
    s += pb.weight[k] * e * e;
  }
  return s;
}

// Residual function over the free pixels with every other pixel at base.
ResidualFn window_fn(const SwmProblem& pb, const std::vector<int>& tuple_ids, const std::vector<int>& free,
                     const std::vector<double>& base) {
  return [&pb, &tuple_ids, &free, &base](std::span<const double> xf, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    std::vector<double> x = base;
    for (std::size_t i = 0; i < free.size(); ++i) x[static_cast<std::size_t>(free[i])] = xf[i];
    const Evaluation ev = pb.model->evaluate(x, tuple_ids, free, jac != nullptr);
    const auto nt = static_cast<Eigen::Index>(tuple_ids.size());
    r.resize(nt);
    if (jac) jac->resize(nt, static_cast<Eigen::Index>(free.size()));
    for (Eigen::Index t = 0; t < nt; ++t) {
      const auto k = static_cast<std::size_t>(tuple_ids[static_cast<std::size_t>(t)]);
      const double sw = std::sqrt(pb.weight[k]);
      r(t) = sw * (ev.probability[static_cast<std::size_t>(t)] - pb.frequency[k]);
      if (jac) jac->row(t) = sw * ev.gradient.row(t);
    }
  };
}

ObjectModel coarse_geometry(const ObjectModel& target, int factor) {
  ObjectModel g;
  g.nx = (target.nx + factor - 1) / factor;
  g.ny = target.is_1d() ? 1 : (target.ny + factor - 1) / factor;
  g.pixel_size = target.pixel_size * factor;
  const double shift = -0.5 * target.pixel_size + 0.5 * g.pixel_size;
  g.origin = {target.origin.x + shift, target.is_1d() ? target.origin.y : target.origin.y + shift};
  g.transmission.assign(static_cast<std::size_t>(g.nx) * g.ny, 0.0);
  return g;
}

FisherReport uniform_fim(const SwmProblem& pb, double value) {
  const std::vector<double> x(pb.geometry.size(), value);
  return build_fim(pb.model->jacobian(x));
}

}  // namespace

Window WindowPlan::full(const Window& c) const {
  Window w;
  w.x0 = std::max(0, c.x0 - border);
  const int x1 = std::min(object_nx, c.x0 + c.nx + border);
  w.nx = x1 - w.x0;
  if (object_ny == 1) {
    w.y0 = 0;
    w.ny = 1;
  } else {
    w.y0 = std::max(0, c.y0 - border);
    const int y1 = std::min(object_ny, c.y0 + c.ny + border);
    w.ny = y1 - w.y0;
  }
  return w;
}

std::vector<int> WindowPlan::pixels(const Window& w) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(w.nx) * w.ny);
  for (int iy = w.y0; iy < w.y0 + w.ny; ++iy) {
    for (int ix = w.x0; ix < w.x0 + w.nx; ++ix) out.push_back(iy * object_nx + ix);
  }
  return out;
}

WindowPlan plan_windows(int object_nx, int object_ny, int core_x, int core_y, int border, WindowMode mode,
                        double margin, int stride) {
  if (object_nx < 1 || object_ny < 1) throw GeometryError("window plan: empty object");
  if (object_ny == 1) core_y = 1;
  if (core_x < 1 || core_y < 1) throw GeometryError("window plan: core must be at least one pixel");
  if (core_x > object_nx || core_y > object_ny) throw GeometryError("window plan: core larger than the object");
  if (border < 0) throw GeometryError("window plan: border must be >= 0");
  if (margin < 0.0) throw GeometryError("window plan: margin must be >= 0");
  if (stride < 0) throw GeometryError("window plan: stride must be >= 0");
  WindowPlan plan;
  plan.mode = mode;
  plan.object_nx = object_nx;
  plan.object_ny = object_ny;
  plan.core_x = core_x;
  plan.core_y = core_y;
  plan.border = border;
  plan.margin = margin;
  const bool unit = mode == WindowMode::Refine && stride == 1;
  const std::vector<int> xs = axis_positions(object_nx, core_x, unit ? 1 : core_x);
  const std::vector<int> ys = axis_positions(object_ny, core_y, unit ? 1 : core_y);
  for (int y : ys) {
    for (int x : xs) plan.cores.push_back({x, y, core_x, core_y});
  }
  return plan;
}

std::vector<int> window_detectors(const Window& w, const ObjectModel& g, const ImagingSystem& sys,
                                  const DetectorGrid& detectors, double margin) {
  if (margin < 0.0) throw GeometryError("window detectors: margin must be >= 0");
  const double d = g.pixel_size;
  const double xlo = g.origin.x + (w.x0 - 0.5) * d - margin;
  const double xhi = g.origin.x + (w.x0 + w.nx - 0.5) * d + margin;
  const double ylo = g.origin.y + (w.y0 - 0.5) * d - margin;
  const double yhi = g.origin.y + (w.y0 + w.ny - 0.5) * d + margin;
  const double eps = 1e-9 * d;
  std::vector<int> out;
  for (std::size_t i = 0; i < detectors.size(); ++i) {
    const Vec2 s = sys.conjugate_of(detectors.points[i]);
    const bool in_x = s.x >= xlo - eps && s.x <= xhi + eps;
    const bool in_y = g.is_1d() || (s.y >= ylo - eps && s.y <= yhi + eps);
    if (in_x && in_y) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> window_tuple_ids(const std::vector<DetectorTuple>& tuples, const std::vector<int>& detector_ids,
                                  int num_detectors) {
  std::vector<char> inside(static_cast<std::size_t>(num_detectors), 0);
  for (int d : detector_ids) inside[static_cast<std::size_t>(d)] = 1;
  std::vector<int> out;
  for (std::size_t k = 0; k < tuples.size(); ++k) {
    bool ok = true;
    for (int d : tuples[k].ids()) ok = ok && inside[static_cast<std::size_t>(d)];
    if (ok) out.push_back(static_cast<int>(k));
  }
  return out;
}

SwmProblem make_problem(const ObjectModel& geometry, const Experiment& experiment, const MeasurementSet& data,
                        WeightMode weighting, std::optional<double> transparent_sum) {
  data.validate();
  SwmProblem pb;
  pb.geometry = geometry;
  pb.experiment = experiment;
  auto tensor = std::make_shared<const CoefficientTensor>(CoefficientTensor::build(
      geometry, experiment.system, experiment.source, experiment.detectors, experiment.options));
  pb.model = std::make_shared<const ForwardModel>(tensor, data.tuples, transparent_sum);
  pb.frequency = data.frequency;
  const double floor = data.exact() ? 1e-9 : 1.0 / static_cast<double>(data.events);
  pb.weight.reserve(pb.frequency.size());
  for (double f : pb.frequency) {
    pb.weight.push_back(weighting == WeightMode::Uniform ? 1.0 : 1.0 / std::max(f, floor));
  }
  return pb;
}

double global_residual(const SwmProblem& pb, std::span<const double> x) {
  std::vector<int> all(pb.frequency.size());
  std::iota(all.begin(), all.end(), 0);
  const Evaluation ev = pb.model->evaluate(x, all, {}, false);
  return weighted_sum(pb, all, ev.probability);
}

WindowTask make_window_task(const SwmProblem& pb, const WindowPlan& plan, const Window& core,
                            std::span<const double> current) {
  WindowTask t;
  t.core = core;
  t.full = plan.full(core);
  t.core_pixels = plan.pixels(core);
  const std::vector<int> full_pixels = plan.pixels(t.full);
  t.base.assign(pb.geometry.size(), 0.0);
  if (plan.mode == WindowMode::FirstApprox) {
    t.free_pixels = full_pixels;
  } else {
    t.free_pixels = t.core_pixels;
    for (int j : full_pixels) t.base[static_cast<std::size_t>(j)] = current[static_cast<std::size_t>(j)];
  }
  const std::vector<int> dets =
      window_detectors(t.core, pb.geometry, pb.experiment.system, pb.experiment.detectors, plan.margin);
  t.tuple_ids = window_tuple_ids(pb.model->tuples(), dets, pb.model->tensor().num_detectors());
  return t;
}

double residual(const SwmProblem& pb, const WindowTask& task, std::span<const double> x_free) {
  if (x_free.size() != task.free_pixels.size()) throw ModelError("window residual: wrong number of values");
  std::vector<double> x = task.base;
  for (std::size_t i = 0; i < x_free.size(); ++i) x[static_cast<std::size_t>(task.free_pixels[i])] = x_free[i];
  const Evaluation ev = pb.model->evaluate(x, task.tuple_ids, {}, false);
  return weighted_sum(pb, task.tuple_ids, ev.probability);
}

SolveResult solve_window(const SwmProblem& pb, const WindowTask& task, std::span<const double> start,
                         const SolverConfig& cfg) {
  if (task.tuple_ids.empty()) {
    SolveResult res;
    res.x.assign(start.begin(), start.end());
    res.converged = true;
    return res;
  }
  return minimize_box(window_fn(pb, task.tuple_ids, task.free_pixels, task.base), start, cfg);
}

PassResult first_approximation(const SwmProblem& pb, const WindowPlan& plan, const SolverConfig& cfg,
                               double initial) {
  if (plan.mode != WindowMode::FirstApprox) throw ModelError("first approximation needs a first-approximation plan");
  if (!(initial >= 0.0 && initial <= 1.0)) throw ModelError("initial value outside [0, 1]");
  const int nw = static_cast<int>(plan.cores.size());
  const std::vector<double> zero(pb.geometry.size(), 0.0);
  std::vector<std::vector<double>> core_values(static_cast<std::size_t>(nw));
  std::vector<double> window_res(static_cast<std::size_t>(nw), 0.0);
  std::vector<char> converged(static_cast<std::size_t>(nw), 1);
  std::vector<char> skipped(static_cast<std::size_t>(nw), 0);

#pragma omp parallel for schedule(dynamic, 1)
  for (int w = 0; w < nw; ++w) {
    const WindowTask task = make_window_task(pb, plan, plan.cores[static_cast<std::size_t>(w)], zero);
    const std::vector<double> start(task.free_pixels.size(), initial);
    const SolveResult sol = solve_window(pb, task, start, cfg);
    skipped[static_cast<std::size_t>(w)] = task.tuple_ids.empty();
    converged[static_cast<std::size_t>(w)] = sol.converged;
    window_res[static_cast<std::size_t>(w)] = sol.objective;
    std::vector<double>& cv = core_values[static_cast<std::size_t>(w)];
    for (int j : task.core_pixels) {
      const auto it = std::find(task.free_pixels.begin(), task.free_pixels.end(), j);
      cv.push_back(sol.x[static_cast<std::size_t>(it - task.free_pixels.begin())]);
    }
  }

  PassResult out;
  out.residual_before = global_residual(pb, std::vector<double>(pb.geometry.size(), initial));
  out.x.assign(pb.geometry.size(), 0.0);
  std::vector<char> assigned(pb.geometry.size(), 0);
  for (int w = 0; w < nw; ++w) {
    const std::vector<int> core = plan.pixels(plan.cores[static_cast<std::size_t>(w)]);
    for (std::size_t i = 0; i < core.size(); ++i) {
      const auto j = static_cast<std::size_t>(core[i]);
      if (assigned[j]) continue;
      assigned[j] = 1;
      out.x[j] = core_values[static_cast<std::size_t>(w)][i];
    }
    out.nonconverged += converged[static_cast<std::size_t>(w)] ? 0 : 1;
    out.skipped += skipped[static_cast<std::size_t>(w)] ? 1 : 0;
  }
  out.window_residuals = std::move(window_res);
  out.residual_after = global_residual(pb, out.x);
  for (double v : out.x) out.max_change = std::max(out.max_change, std::abs(v - initial));
  return out;
}

PassResult refine_sweep(const SwmProblem& pb, const WindowPlan& plan, std::span<const double> x_in,
                        const SolverConfig& cfg) {
  if (plan.mode != WindowMode::Refine) throw ModelError("refine sweep needs a refinement plan");
  if (x_in.size() != pb.geometry.size()) throw ModelError("refine sweep: estimate has the wrong size");
  PassResult out;
  out.x.assign(x_in.begin(), x_in.end());
  double current = global_residual(pb, out.x);
  out.residual_before = current;
  for (const Window& core : plan.cores) {
    const WindowTask task = make_window_task(pb, plan, core, out.x);
    if (task.tuple_ids.empty()) {
      ++out.skipped;
      out.window_residuals.push_back(0.0);
      continue;
    }
    const std::vector<double> start = gather(out.x, task.free_pixels);
    const SolveResult sol = solve_window(pb, task, start, cfg);
    if (!sol.converged) ++out.nonconverged;
    std::vector<double> best = start;
    std::vector<double> trial = out.x;
    double t = 1.0;
    for (int attempt = 0; attempt < 5; ++attempt, t *= 0.5) {
      std::vector<double> cand(start.size());
      for (std::size_t i = 0; i < start.size(); ++i) cand[i] = start[i] + t * (sol.x[i] - start[i]);
      for (std::size_t i = 0; i < cand.size(); ++i) trial[static_cast<std::size_t>(task.free_pixels[i])] = cand[i];
      const double r = global_residual(pb, trial);
      if (r <= current) {
        current = r;
        best = cand;
        break;
      }
    }
    for (std::size_t i = 0; i < best.size(); ++i) out.x[static_cast<std::size_t>(task.free_pixels[i])] = best[i];
    out.window_residuals.push_back(residual(pb, task, best));
  }
  out.residual_after = current;
  out.aborted = out.residual_after > out.residual_before * (1.0 + 1e-9) + 1e-300;
  for (std::size_t j = 0; j < out.x.size(); ++j) out.max_change = std::max(out.max_change, std::abs(out.x[j] - x_in[j]));
  return out;
}

SolveResult global_solve(const SwmProblem& pb, std::span<const double> start, const SolverConfig& cfg) {
  std::vector<int> all(pb.frequency.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> free(pb.geometry.size());
  std::iota(free.begin(), free.end(), 0);
  const std::vector<double> base(pb.geometry.size(), 0.0);
  return minimize_box(window_fn(pb, all, free, base), start, cfg);
}

double infidelity(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.size() != estimate.size()) throw ModelError("infidelity: length mismatch");
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    xy += truth[i] * estimate[i];
    xx += truth[i] * truth[i];
    yy += estimate[i] * estimate[i];
  }
  if (xx == 0.0 || yy == 0.0) throw ModelError("infidelity: all-zero vector");
  return std::clamp(1.0 - xy * xy / (xx * yy), 0.0, 1.0);
}

namespace {

double probe_min_ratio(const ImagingSystem& sys, const SourceModel& src, int order, double d, const ProbeConfig& probe) {
  const int n = probe.pixels;
  ObjectModel obj = probe.two_dimensional
                        ? ObjectModel::grid(n, n, std::vector<double>(static_cast<std::size_t>(n) * n, probe.value), d)
                        : ObjectModel::line(std::vector<double>(static_cast<std::size_t>(n), probe.value), d);
  const Experiment ex = make_experiment(obj, sys, src, order, probe.padding, probe.cap_factor);
  auto tensor = std::make_shared<const CoefficientTensor>(
      CoefficientTensor::build(obj, ex.system, ex.source, ex.detectors, ex.options));
  const ForwardModel model(tensor, experiment_tuples(ex));
  return build_fim(model.jacobian(obj.transmission)).min_dominance;
}

}  // namespace

PixelSizeChoice choose_initial_pixel_size(const ImagingSystem& sys, const SourceModel& src, int order,
                                          double threshold, ProbeConfig probe) {
  if (probe.pixels < 2) throw ModelError("probe needs at least two pixels");
  const double dl = sys.rayleigh_width();
  const double lo_end = 0.25 * dl;
  const double hi_end = 8.0 * dl;
  PixelSizeChoice out;
  double fail = 0.0;
  for (double d = lo_end; d <= hi_end * (1.0 + 1e-12); d *= 2.0) {
    const double r = probe_min_ratio(sys, src, order, d, probe);
    if (r >= threshold) {
      out.found = true;
      out.pixel_size = d;
      out.min_ratio = r;
      break;
    }
    fail = d;
  }
  if (!out.found || fail == 0.0) return out;
  double lo = fail;
  double hi = out.pixel_size;
  while (hi - lo > probe.tolerance * dl) {
    const double mid = 0.5 * (lo + hi);
    const double r = probe_min_ratio(sys, src, order, mid, probe);
    if (r >= threshold) {
      hi = mid;
      out.min_ratio = r;
    } else {
      lo = mid;
    }
  }
  out.pixel_size = hi;
  return out;
}

int border_from_fim(const FisherReport& report, const ObjectModel& geometry, double eps) {
  const Eigen::MatrixXd& f = report.fim;
  const int m = static_cast<int>(f.rows());
  if (m != static_cast<int>(geometry.size())) throw ModelError("border rule: FIM size does not match geometry");
  if (geometry.is_1d()) return effective_bandwidth(f, eps) + 1;
  // Chebyshev pixel distance in place of the index distance.
  const int span = std::max(geometry.nx, geometry.ny);
  std::vector<double> mass(static_cast<std::size_t>(span), 0.0);
  double total = 0.0;
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < m; ++k) {
      if (j == k) continue;
      const int dist = std::max(std::abs(j % geometry.nx - k % geometry.nx), std::abs(j / geometry.nx - k / geometry.nx));
      mass[static_cast<std::size_t>(dist)] += std::abs(f(j, k));
      total += std::abs(f(j, k));
    }
  }
  if (total == 0.0) return 1;
  double outside = total;
  for (int l = 1; l < span; ++l) {
    outside -= mass[static_cast<std::size_t>(l)];
    if (outside <= eps * total * (1.0 + 1e-12)) return l + 1;
  }
  return span;
}

ReconstructionResult reconstruct(const Dataset& ds, const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.solver.validate();
  if (cfg.max_sweeps < 1) throw ConfigError("pipeline: max_sweeps must be >= 1");
  const Experiment& ex = ds.experiment;
  const ObjectModel& target = ds.geometry;
  const MeasurementSet& data = ds.data;
  data.validate();
  const bool one_d = target.is_1d();
  const double dl = ex.system.rayleigh_width();
  const int core = cfg.core > 0 ? cfg.core : (one_d ? 4 : 3);
  const double margin = cfg.margin >= 0.0 ? cfg.margin : 0.5 * dl;

  ReconstructionResult res;

  // P_S of the data geometry.
  const SwmProblem target_pb = make_problem(target, ex, data, cfg.solver.weighting);
  const double ps = target_pb.model->transparent_sum();

  int factor = 1;
  if (cfg.initial_factor > 0) {
    factor = cfg.initial_factor;
    if ((factor & (factor - 1)) != 0) throw ConfigError("pipeline: initial factor must be a power of two");
  } else {
    bool found = false;
    int last_in_range = 1;
    for (int f = 1; target.pixel_size * f <= 8.0 * dl * (1.0 + 1e-12); f *= 2) {
      last_in_range = f;
      if (target.pixel_size * f < 0.25 * dl * (1.0 - 1e-12)) continue;
      const ObjectModel g = f == 1 ? target : coarse_geometry(target, f);
      const SwmProblem pb = f == 1 ? target_pb : make_problem(g, ex, data, cfg.solver.weighting, ps);
      if (uniform_fim(pb, 0.5).min_dominance >= cfg.dominance_threshold) {
        factor = f;
        found = true;
        break;
      }
    }
    if (!found) {
      factor = last_in_range;
      res.flags.push_back("no pixel size in range passes the dominance test; using the coarsest");
    }
  }
  res.initial_factor = factor;
  res.initial_pixel_size = target.pixel_size * factor;

  // Pad so that every stage is an exact subdivision of the previous one.
  ObjectModel padded = target;
  padded.nx = (target.nx + factor - 1) / factor * factor;
  if (!one_d) padded.ny = (target.ny + factor - 1) / factor * factor;
  padded.transmission.assign(static_cast<std::size_t>(padded.nx) * padded.ny, 0.0);
  const bool is_padded = padded.nx != target.nx || padded.ny != target.ny;

  std::vector<double> x;
  int stage = 0;
  std::vector<double> last_window_res;
  for (int f = factor; f >= 1; f /= 2, ++stage) {
    const ObjectModel g = coarse_geometry(padded, f);
    const SwmProblem pb = f == 1 && !is_padded ? target_pb : make_problem(g, ex, data, cfg.solver.weighting, ps);
    const int border = cfg.border >= 0 ? cfg.border : border_from_fim(uniform_fim(pb, 0.5), g);
    res.borders.push_back(border);
    const int cx = std::min(core, g.nx);
    const int cy = one_d ? 1 : std::min(core, g.ny);

    if (f == factor) {
      const WindowPlan fa = plan_windows(g.nx, g.ny, cx, cy, border, WindowMode::FirstApprox, margin);
      PassResult pr = first_approximation(pb, fa, cfg.solver, cfg.initial_value);
      res.nonconverged_windows += pr.nonconverged;
      res.history.push_back({stage, g.pixel_size, 0, pr.residual_after, pr.max_change});
      x = std::move(pr.x);
      last_window_res = pr.window_residuals;
    } else {
      ObjectModel prev = coarse_geometry(padded, f * 2);
      prev.transmission = x;
      x = subdivide(prev, 2).transmission;
    }

    const WindowPlan rp = plan_windows(g.nx, g.ny, cx, cy, border, WindowMode::Refine, margin, cfg.refine_stride);
    for (int s = 1; s <= cfg.max_sweeps; ++s) {
      PassResult pr = refine_sweep(pb, rp, x, cfg.solver);
      res.nonconverged_windows += pr.nonconverged;
      if (pr.aborted) res.flags.push_back("refinement sweep increased the residual");
      res.history.push_back({stage, g.pixel_size, s, pr.residual_after, pr.max_change});
      x = std::move(pr.x);
      last_window_res = pr.window_residuals;
      if (pr.max_change < cfg.sweep_tolerance) break;
      if (s == cfg.max_sweeps) res.flags.push_back("sweep cap reached at pixel size " + std::to_string(g.pixel_size));
    }
  }

  // Crop the padded grid back to the target.
  const ObjectModel& fine = padded;
  res.estimate = target;
  for (int iy = 0; iy < target.ny; ++iy) {
    for (int ix = 0; ix < target.nx; ++ix) {
      res.estimate.transmission[static_cast<std::size_t>(target.index(ix, iy))] =
          std::clamp(x[static_cast<std::size_t>(fine.index(ix, iy))], 0.0, 1.0);
    }
  }
  res.window_residuals = std::move(last_window_res);
  if (ds.has_truth) {
    const bool any_truth = std::any_of(target.transmission.begin(), target.transmission.end(), [](double v) { return v != 0.0; });
    const bool any_est = std::any_of(res.estimate.transmission.begin(), res.estimate.transmission.end(),
                                     [](double v) { return v != 0.0; });
    if (any_truth && any_est) res.infidelity = infidelity(target.transmission, res.estimate.transmission);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

ObjectModel naive_image(const Dataset& ds) {
  const ObjectModel& g = ds.geometry;
  const MeasurementSet& m = ds.data;
  const DetectorGrid& dets = ds.experiment.detectors;
  if (m.order < 1) throw ModelError("naive image: measurement has no order");
  std::vector<int> diagonal(dets.size(), -1);
  for (std::size_t k = 0; k < m.tuples.size(); ++k) {
    const auto ids = m.tuples[k].ids();
    if (std::all_of(ids.begin(), ids.end(), [&](int d) { return d == ids[0]; })) {
      diagonal[static_cast<std::size_t>(ids[0])] = static_cast<int>(k);
    }
  }
  ObjectModel out = g.filled(0.0);
  double peak = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const Vec2 r = ds.experiment.system.image_of(g.center(static_cast<int>(j)));
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double dist = norm(dets.points[d] - r);
      if (dist < best_dist) {
        best_dist = dist;
        best = d;
      }
    }
    const int k = diagonal[best];
    if (k < 0) continue;
    const double f = std::max(m.frequency[static_cast<std::size_t>(k)], 0.0);
    out.transmission[j] = std::pow(f, 1.0 / (2.0 * m.order));
    peak = std::max(peak, out.transmission[j]);
  }
  if (peak > 0.0) {
    for (double& v : out.transmission) v /= peak;
  }
  return out;
}

}  // namespace qimg
