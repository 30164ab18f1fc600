#include "qimg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "qimg/fisher.hpp"
#include "qimg/solver.hpp"
#include "qimg/swm.hpp"

namespace qimg {

std::vector<std::uint64_t> sample_multinomial(std::span<const double> p, std::uint64_t n, Philox4x32& rng) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ModelError("multinomial: invalid probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ModelError("multinomial: probabilities do not sum to one");
  std::vector<std::uint64_t> counts(p.size(), 0);
  std::uint64_t left = n;
  double mass = total;
  for (std::size_t k = 0; k < p.size() && left > 0; ++k) {
    if (k + 1 == p.size() || p[k] >= mass) {
      counts[k] = left;
      left = 0;
      break;
    }
    const double q = std::clamp(p[k] / mass, 0.0, 1.0);
    std::uint64_t c = 0;
    if (q > 0.0) {
      std::binomial_distribution<std::uint64_t> bin(left, q);
      c = bin(rng);
    }
    counts[k] = c;
    left -= c;
    mass -= p[k];
  }
  return counts;
}

Dataset synthesize_dataset(const ObjectModel& truth, const Experiment& ex, std::uint64_t events, std::uint64_t seed,
                           SamplingMode mode) {
  truth.validate();
  auto tensor = std::make_shared<const CoefficientTensor>(
      CoefficientTensor::build(truth.filled(0.0), ex.system, ex.source, ex.detectors, ex.options));
  const std::vector<DetectorTuple> tuples = experiment_tuples(ex);
  if (tuples.empty()) throw ModelError("simulation: no detector tuples");
  const ForwardModel model(tensor, tuples);
  const NormalizedProbabilities np = model.probabilities(truth.transmission);

  Dataset ds;
  ds.experiment = ex;
  ds.geometry = truth;
  ds.has_truth = true;
  MeasurementSet& m = ds.data;
  m.order = ex.order;
  m.tuples = tuples;
  m.probability = np.probability;
  m.no_counts_probability = np.no_counts;
  m.events = events;
  m.seed = seed;
  if (events == 0) {
    m.frequency = np.probability;
    m.no_counts_frequency = np.no_counts;
    return ds;
  }
  Philox4x32 rng(seed, 0);
  const double n = static_cast<double>(events);
  if (mode == SamplingMode::Multinomial) {
    std::vector<double> all = np.probability;
    all.push_back(np.no_counts);
    // Absorb the roundoff of the completion into the no-counts bin.
    const double sum = std::accumulate(all.begin(), all.end(), 0.0);
    all.back() = std::max(0.0, all.back() + (1.0 - sum));
    std::vector<std::uint64_t> c = sample_multinomial(all, events, rng);
    m.no_counts_count = c.back();
    c.pop_back();
    m.counts = std::move(c);
  } else {
    m.counts.resize(tuples.size());
    std::uint64_t used = 0;
    for (std::size_t k = 0; k < tuples.size(); ++k) {
      const double mean = n * np.probability[k];
      std::uint64_t c = 0;
      if (mean > 0.0) {
        std::poisson_distribution<std::uint64_t> poi(mean);
        c = poi(rng);
      }
      m.counts[k] = c;
      used += c;
    }
    m.no_counts_count = used < events ? events - used : 0;
    // Counts may exceed N in this mode; N then records the realized total.
    m.events = std::max(events, used);
  }
  const double total = static_cast<double>(m.events);
  m.frequency.resize(m.counts.size());
  for (std::size_t k = 0; k < m.counts.size(); ++k) m.frequency[k] = static_cast<double>(m.counts[k]) / total;
  m.no_counts_frequency = static_cast<double>(m.no_counts_count) / total;
  return ds;
}

namespace {

// Field sample points with quadrature weight sigma (pixel measure / subpixel count).
struct FieldGrid {
  std::vector<Vec2> points;
  std::vector<double> weight;  // sigma * transmission
};

FieldGrid field_grid(const ObjectModel& obj, int sub) {
  FieldGrid g;
  const double d = obj.pixel_size / sub;
  const int sy = obj.is_1d() ? 1 : sub;
  const double sigma = obj.is_1d() ? d : d * d;
  for (int j = 0; j < static_cast<int>(obj.size()); ++j) {
    const Vec2 c = obj.center(j);
    for (int b = 0; b < sy; ++b) {
      for (int a = 0; a < sub; ++a) {
        const double ox = (a + 0.5) * d - 0.5 * obj.pixel_size;
        const double oy = obj.is_1d() ? 0.0 : (b + 0.5) * d - 0.5 * obj.pixel_size;
        g.points.push_back({c.x + ox, c.y + oy});
        g.weight.push_back(sigma * obj.transmission[static_cast<std::size_t>(j)]);
      }
    }
  }
  return g;
}

}  // namespace

OracleEstimate speckle_oracle_gn(const ObjectModel& obj, const ImagingSystem& sys, double correlation_width,
                                 std::span<const Vec2> points, int samples, std::uint64_t seed, OracleOptions options) {
  obj.validate();
  if (samples < 1000) throw ModelError("speckle oracle: at least 1000 samples required");
  if (points.empty() || points.size() > static_cast<std::size_t>(kMaxOrder)) {
    throw ModelError("speckle oracle: order must be in [1, 4]");
  }
  if (!(correlation_width > 0.0)) throw ModelError("speckle oracle: correlation width must be positive");
  if (options.subpixel < 1) throw ModelError("speckle oracle: subpixel must be >= 1");

  const FieldGrid grid = field_grid(obj, options.subpixel);
  const auto m = static_cast<Eigen::Index>(grid.points.size());
  Eigen::MatrixXd cov(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      const Vec2 dv = grid.points[static_cast<std::size_t>(a)] - grid.points[static_cast<std::size_t>(b)];
      cov(a, b) = std::exp(-(dv.x * dv.x + dv.y * dv.y) / (correlation_width * correlation_width));
    }
  }
  OracleEstimate out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.eigenvalues().minCoeff() < 0.0) {
    cov += 1e-10 * Eigen::MatrixXd::Identity(m, m);
    es.compute(cov);
    out.regularized = true;
  }
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_cov = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();

  // Propagator from field samples to detectors, transmission included.
  const auto nt = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd prop(nt, m);
  for (Eigen::Index t = 0; t < nt; ++t) {
    for (Eigen::Index a = 0; a < m; ++a) {
      prop(t, a) = grid.weight[static_cast<std::size_t>(a)] *
                   psf_eval(grid.points[static_cast<std::size_t>(a)], points[static_cast<std::size_t>(t)], sys);
    }
  }
  const Eigen::MatrixXd op = prop * sqrt_cov;

  constexpr int kChunk = 1000;
  const int chunks = (samples + kChunk - 1) / kChunk;
  std::vector<double> sums(static_cast<std::size_t>(chunks), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    Philox4x32 rng(seed, static_cast<std::uint64_t>(c));
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    Eigen::VectorXd zr(m), zi(m);
    const int count = std::min(kChunk, samples - c * kChunk);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < count; ++i) {
      for (Eigen::Index a = 0; a < m; ++a) {
        zr(a) = normal(rng);
        zi(a) = normal(rng);
      }
      const Eigen::VectorXd ur = op * zr;
      const Eigen::VectorXd ui = op * zi;
      double prod = 1.0;
      for (Eigen::Index t = 0; t < nt; ++t) prod *= ur(t) * ur(t) + ui(t) * ui(t);
      s += prod;
      s2 += prod * prod;
    }
    sums[static_cast<std::size_t>(c)] = s;
    sq[static_cast<std::size_t>(c)] = s2;
  }
  double s = 0.0, s2 = 0.0;
  for (int c = 0; c < chunks; ++c) {
    s += sums[static_cast<std::size_t>(c)];
    s2 += sq[static_cast<std::size_t>(c)];
  }
  const double n = samples;
  out.mean = s / n;
  const double var = std::max(s2 / n - out.mean * out.mean, 0.0) * n / (n - 1.0);
  out.std_error = std::sqrt(var / n);
  return out;
}

WidthFit fit_correlation_width(std::span<const G2Sample> samples, double magnification) {
  if (!(magnification > 0.0)) throw ModelError("width fit: magnification must be positive");
  std::vector<double> seps;
  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  for (const G2Sample& s : samples) {
    if (!(s.separation >= 0.0) || !std::isfinite(s.value)) throw ModelError("width fit: invalid sample");
    seps.push_back(s.separation);
    vmin = std::min(vmin, s.value);
    vmax = std::max(vmax, s.value);
  }
  std::sort(seps.begin(), seps.end());
  const auto distinct = std::unique(seps.begin(), seps.end(), [](double a, double b) {
                          return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a));
                        }) - seps.begin();
  if (distinct < 5) throw ModelError("width fit: at least five distinct separations required");
  if (!(vmax > 0.0) || vmax - vmin <= 1e-12 * std::abs(vmax)) throw ModelError("width fit: flat correlation map");

  // Log-linear start: ln G = ln A - b s^2 with b = 2 / (m w)^2.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const G2Sample& s : samples) {
    if (s.value <= 0.0) continue;
    const double x = s.separation * s.separation;
    const double y = std::log(s.value);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  double a0 = vmax;
  double w0 = 0.0;
  const double den = n * sxx - sx * sx;
  if (n >= 2 && den > 0.0) {
    const double slope = (n * sxy - sx * sy) / den;
    if (slope < 0.0) {
      w0 = std::sqrt(-2.0 / slope) / magnification;
      a0 = std::exp((sy - slope * sx) / n);
    }
  }
  if (!(w0 > 0.0)) w0 = seps.back() / magnification;

  // Refine in scaled coordinates u = A / a0, v = w / w0.
  const auto fn = [&](std::span<const double> p, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const double a = a0 * p[0];
    const double w = w0 * p[1];
    const double mw = magnification * w;
    r.resize(static_cast<Eigen::Index>(samples.size()));
    if (jac) jac->resize(r.size(), 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double s2 = samples[i].separation * samples[i].separation;
      const double e = std::exp(-2.0 * s2 / (mw * mw));
      const auto k = static_cast<Eigen::Index>(i);
      r(k) = (a * e - samples[i].value) / vmax;
      if (jac) {
        (*jac)(k, 0) = a0 * e / vmax;
        (*jac)(k, 1) = a * e * 4.0 * s2 / (mw * mw * w) * w0 / vmax;
      }
    }
  };
  SolverConfig cfg;
  cfg.max_iterations = 500;
  cfg.gradient_tolerance = 1e-12;
  cfg.step_tolerance = 1e-12;
  const std::vector<double> start{1.0, 1.0};
  const SolveResult sol = minimize_box(fn, start, 1e-3, 1e3, cfg);
  return {w0 * sol.x[1], a0 * sol.x[0], sol.converged};
}

void classify_sweep(SweepResult& res, double tol) {
  res.argmin = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    const SweepPoint& p = res.points[i];
    if (p.singular || !std::isfinite(p.metric)) continue;
    if (p.metric < best) {
      best = p.metric;
      res.argmin = static_cast<int>(i);
    }
  }
  const int last = static_cast<int>(res.points.size()) - 1;
  res.interior_minimum = res.argmin > 0 && res.argmin < last;
  // Walking toward small widths the metric may not rise.
  res.monotone = res.argmin >= 0;
  const auto value = [](const SweepPoint& p) {
    return p.singular || !std::isfinite(p.metric) ? std::numeric_limits<double>::infinity() : p.metric;
  };
  for (std::size_t i = 1; i < res.points.size(); ++i) {
    const double smaller = value(res.points[i - 1]);
    const double larger = value(res.points[i]);
    if (std::isinf(smaller) && std::isinf(larger)) continue;
    if (smaller > larger * (1.0 + tol)) {
      res.monotone = false;
      break;
    }
  }
}

SweepResult sweep_width(const ObjectModel& phantom, const Experiment& ex, std::span<const double> widths,
                        const SweepConfig& cfg, const PipelineConfig* pipeline) {
  if (widths.size() < 5) throw ModelError("sweep: at least five widths required");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!(widths[i] > 0.0)) throw ModelError("sweep: widths must be positive");
    if (i > 0 && !(widths[i] > widths[i - 1])) throw ModelError("sweep: widths must be strictly increasing");
  }
  if (cfg.events == 0) throw ModelError("sweep: event count must be positive");
  phantom.validate();
  SweepResult res;
  res.metric = cfg.metric;
  res.points.resize(widths.size());
  const std::vector<DetectorTuple> tuples = experiment_tuples(ex);
  PipelineConfig pcfg = pipeline ? *pipeline : PipelineConfig{};

  for (std::size_t i = 0; i < widths.size(); ++i) {
    SweepPoint& pt = res.points[i];
    pt.width = widths[i];
    Experiment exi = ex;
    exi.source = with_correlation_width(ex.source, widths[i]);
    try {
      if (cfg.metric == SweepMetric::Crb) {
        auto tensor = std::make_shared<const CoefficientTensor>(
            CoefficientTensor::build(phantom, exi.system, exi.source, exi.detectors, exi.options));
        const ForwardModel model(tensor, tuples);
        const FisherReport rep = build_fim(model.jacobian(phantom.transmission));
        pt.rank = rep.rank;
        pt.singular = rep.singular;
        pt.metric = rep.inv_trace / static_cast<double>(cfg.events);
      } else {
        std::vector<double> vals;
        for (std::uint64_t seed : cfg.seeds) {
          const Dataset ds = synthesize_dataset(phantom, exi, cfg.events, seed);
          vals.push_back(reconstruct(ds, pcfg).infidelity.value_or(1.0));
        }
        const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        pt.metric = mean;
        pt.std_error = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1) / vals.size()) : 0.0;
        pt.rank = static_cast<int>(phantom.size());
      }
    } catch (const ModelError&) {
      pt.singular = true;
      pt.metric = std::numeric_limits<double>::infinity();
    }
  }
  classify_sweep(res, cfg.relative_tolerance);
  return res;
}

std::vector<G2Sample> gaussian_g2_map(double wc, double m, double amplitude, int count, double max_sep,
                                      double noise, std::uint64_t seed) {
  if (!(wc > 0.0) || !(m > 0.0) || count < 2 || !(max_sep > 0.0) || noise < 0.0) {
    throw ModelError("g2 map: invalid parameters");
  }
  Philox4x32 rng(seed, 0);
  std::normal_distribution<double> z;
  std::vector<G2Sample> out;
  for (int i = 0; i < count; ++i) {
    const double s = max_sep * i / (count - 1);
    double v = amplitude * std::exp(-2.0 * s * s / ((m * wc) * (m * wc)));
    if (noise > 0.0) v *= 1.0 + noise * z(rng);
    out.push_back({s, v});
  }
  return out;
}

ClippedMonteCarlo clipped_estimator_monte_carlo(double x, double f11, double n_events, int trials,
                                                std::uint64_t seed, std::uint64_t stream) {
  if (!(f11 > 0.0) || !(n_events > 0.0) || trials < 2) throw ModelError("clipped estimator: invalid parameters");
  const double delta = 1.0 / std::sqrt(f11 * n_events);
  Philox4x32 rng(seed, stream);
  std::normal_distribution<double> z;
  double sum = 0.0, sum2 = 0.0, err2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    const double y = std::min(x + delta * z(rng), 1.0);
    sum += y;
    sum2 += y * y;
    err2 += (y - x) * (y - x);
  }
  ClippedMonteCarlo mc;
  mc.trials = trials;
  mc.mean = sum / trials;
  mc.variance = (sum2 - trials * mc.mean * mc.mean) / (trials - 1);
  mc.mse = err2 / trials;
  return mc;
}

void write_sweep_csv(std::ostream& out, const SweepResult& res) {
  const auto old = out.precision(17);
  out << "w_c_um,metric,stderr,singular,rank\n";
  for (const SweepPoint& p : res.points) {
    out << p.width << ',' << p.metric << ',' << p.std_error << ',' << (p.singular ? 1 : 0) << ',' << p.rank << '\n';
  }
  out.precision(old);
}

}  // namespace qimg
