// qimg command-line driver.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "qimg/config.hpp"
#include "qimg/dataset_io.hpp"
#include "qimg/fisher.hpp"
#include "qimg/phantoms.hpp"
#include "qimg/sim.hpp"
#include "qimg/swm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qimg;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::string out;
  bool svg = false;
  std::string dataset;
  int debug_diagonal = 0;
};

RunConfig load(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (o.seed_set) cfg.run.seed = o.seed;
  if (!o.out.empty()) cfg.outputs.dir = o.out;
  fs::create_directories(cfg.outputs.dir);
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  return out;
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_svg(const std::string& path, const ObjectModel& est, const ObjectModel* truth, const ObjectModel& naive) {
  std::ofstream out = open_out(path);
  out << std::setprecision(6);
  if (est.is_1d()) {
    const double w = 640, h = 320, pad = 30;
    const auto poly = [&](const ObjectModel& o, const char* colour) {
      out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
      const int n = static_cast<int>(o.size());
      for (int j = 0; j < n; ++j) {
        const double x = pad + (w - 2 * pad) * (n > 1 ? static_cast<double>(j) / (n - 1) : 0.5);
        const double y = h - pad - (h - 2 * pad) * o.transmission[static_cast<std::size_t>(j)];
        out << x << ',' << y << ' ';
      }
      out << "\"/>\n";
    };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (truth) poly(*truth, "black");
    poly(naive, "gray");
    poly(est, "crimson");
    out << "</svg>\n";
    return;
  }
  const double cell = 24;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cell * est.nx << "\" height=\"" << cell * est.ny
      << "\">\n";
  for (int iy = 0; iy < est.ny; ++iy) {
    for (int ix = 0; ix < est.nx; ++ix) {
      const int g = static_cast<int>(std::lround(255 * est.transmission[static_cast<std::size_t>(est.index(ix, iy))]));
      out << "<rect x=\"" << ix * cell << "\" y=\"" << iy * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

int cmd_simulate(const Options& o) {
  const RunConfig cfg = load(o);
  const ObjectModel obj = make_object(cfg);
  const Experiment ex = make_run_experiment(cfg, obj);
  const Dataset ds = synthesize_dataset(obj, ex, cfg.run.events, cfg.run.seed, cfg.run.sampling);
  const std::string path = cfg.outputs.path(cfg.outputs.dataset);
  save_dataset(path, ds);
  std::cout << std::setprecision(10) << "outcomes " << ds.data.tuples.size() + 1 << "\n"
            << "P_0 " << ds.data.no_counts_probability << "\n"
            << "no_counts_frequency " << ds.data.no_counts_frequency << "\n"
            << "dataset " << path << "\n";
  return 0;
}

int cmd_reconstruct(const Options& o) {
  const RunConfig cfg = load(o);
  const std::string in = o.dataset.empty() ? cfg.outputs.path(cfg.outputs.dataset) : o.dataset;
  const Dataset ds = load_dataset(in);
  const ReconstructionResult r = reconstruct(ds, cfg.run.pipeline);
  const ObjectModel naive = naive_image(ds);

  {
    std::ofstream out = open_out(cfg.outputs.path(cfg.outputs.estimate));
    out << std::setprecision(17) << "ix,iy,x_hat,naive" << (ds.has_truth ? ",truth" : "") << '\n';
    for (int iy = 0; iy < r.estimate.ny; ++iy) {
      for (int ix = 0; ix < r.estimate.nx; ++ix) {
        const auto j = static_cast<std::size_t>(r.estimate.index(ix, iy));
        out << ix << ',' << iy << ',' << r.estimate.transmission[j] << ',' << naive.transmission[j];
        if (ds.has_truth) out << ',' << ds.geometry.transmission[j];
        out << '\n';
      }
    }
  }

  json history = json::array();
  for (const SweepRecord& h : r.history) {
    history.push_back({{"stage", h.stage},
                       {"pixel_size_um", h.pixel_size},
                       {"sweep", h.sweep},
                       {"residual", h.residual},
                       {"max_change", h.max_change}});
  }
  json doc = {{"format", "qimg-reconstruction"},
              {"version", 1},
              {"estimate", r.estimate.transmission},
              {"window_residuals", r.window_residuals},
              {"history", history},
              {"initial_pixel_size_um", r.initial_pixel_size},
              {"initial_factor", r.initial_factor},
              {"borders", r.borders},
              {"nonconverged_windows", r.nonconverged_windows},
              {"flags", r.flags},
              {"metadata", {{"created", timestamp()}, {"seconds", r.seconds}}}};
  if (r.infidelity) {
    double worst = 0.0;
    for (std::size_t j = 0; j < r.estimate.size(); ++j) {
      worst = std::max(worst, std::abs(r.estimate.transmission[j] - ds.geometry.transmission[j]));
    }
    doc["infidelity"] = *r.infidelity;
    doc["max_abs_error"] = worst;
    doc["naive_infidelity"] = infidelity(ds.geometry.transmission, naive.transmission);
  }
  const std::string rpath = cfg.outputs.path(cfg.outputs.reconstruction);
  open_out(rpath) << doc.dump(1) << '\n';
  if (o.svg) write_svg(cfg.outputs.path("profile.svg"), r.estimate, ds.has_truth ? &ds.geometry : nullptr, naive);

  std::cout << std::setprecision(10);
  if (r.infidelity) {
    std::cout << "infidelity " << *r.infidelity << "\nmax_abs_error " << doc["max_abs_error"].get<double>() << '\n';
  }
  std::cout << "nonconverged_windows " << r.nonconverged_windows << "\nreport " << rpath << '\n';
  return 0;
}

int cmd_analyze_fim(const Options& o) {
  const RunConfig cfg = load(o);
  FisherReport rep;
  if (o.debug_diagonal > 0) {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(o.debug_diagonal, o.debug_diagonal);
    for (int j = 0; j < o.debug_diagonal; ++j) f(j, j) = 1.0 + j;
    rep = analyze_fim(f);
  } else {
    ObjectModel obj = make_object(cfg);
    if (cfg.analysis.uniform_value >= 0.0) obj = obj.filled(cfg.analysis.uniform_value);
    const Experiment ex = make_run_experiment(cfg, obj);
    auto tensor = std::make_shared<const CoefficientTensor>(
        CoefficientTensor::build(obj, ex.system, ex.source, ex.detectors, ex.options));
    const ForwardModel model(tensor, experiment_tuples(ex));
    rep = build_fim(model.jacobian(obj.transmission));
  }
  const DominanceProfile dom = dominance_profile(rep.fim, cfg.analysis.dominance_threshold);
  const int band = effective_bandwidth(rep.fim, cfg.analysis.bandwidth_epsilon);
  const double n = cfg.run.events > 0 ? static_cast<double>(cfg.run.events) : 1.0;

  const std::string path = cfg.outputs.path(cfg.outputs.fim_report);
  {
    std::ofstream out = open_out(path);
    write_report(out, rep);
  }
  std::cout << std::setprecision(10) << "diagonally dominant: " << (dom.verdict ? "true" : "false") << '\n'
            << "min_dominance " << dom.min_ratio << '\n'
            << "effective_bandwidth " << band << '\n'
            << "rank " << rep.rank << (rep.singular ? " (singular)" : "") << '\n'
            << "crb_total " << rep.inv_trace / n << '\n'
            << "gershgorin_lower " << rep.gershgorin_lower << '\n'
            << "trace_lower " << rep.trace_lower << '\n'
            << "lambda_min " << rep.lambda_min << '\n'
            << "report " << path << '\n';
  return 0;
}

int cmd_sweep_width(const Options& o) {
  const RunConfig cfg = load(o);
  const ObjectModel obj = make_object(cfg);
  const Experiment ex = make_run_experiment(cfg, obj);
  std::vector<double> widths;
  const int np = cfg.sweep.points;
  const double ratio = cfg.sweep.max_factor / cfg.sweep.min_factor;
  for (int i = 0; i < np; ++i) {
    widths.push_back(obj.pixel_size * cfg.sweep.min_factor * std::pow(ratio, static_cast<double>(i) / (np - 1)));
  }
  SweepConfig sc;
  sc.metric = cfg.sweep.metric;
  sc.events = cfg.run.events > 0 ? cfg.run.events : 1000000;
  sc.seeds = cfg.sweep.seeds;
  const SweepResult res = sweep_width(obj, ex, widths, sc, &cfg.run.pipeline);
  const std::string path = cfg.outputs.path(cfg.outputs.sweep);
  {
    std::ofstream out = open_out(path);
    write_sweep_csv(out, res);
  }
  std::cout << std::setprecision(10) << "argmin_w_c_um " << res.argmin_width() << '\n'
            << "argmin_w_c_px " << res.argmin_width() / obj.pixel_size << '\n'
            << "interior_minimum " << (res.interior_minimum ? "true" : "false") << '\n'
            << "monotone " << (res.monotone ? "true" : "false") << '\n'
            << "table " << path << '\n';
  return 0;
}

int cmd_bias_demo(const Options& o) {
  const RunConfig cfg = load(o);
  const BiasBlock& b = cfg.bias;
  const std::string path = cfg.outputs.path(cfg.outputs.bias);
  std::ofstream out = open_out(path);
  out << std::setprecision(17) << "x,xi,mean,variance_bound,variance_ratio,variance,mse";
  if (b.monte_carlo_trials > 0) out << ",mc_mean,mc_variance,mc_mse";
  out << '\n';
  for (int i = 0; i < b.points; ++i) {
    const double x = static_cast<double>(i) / (b.points - 1);
    const ClippedEstimatorStats s = clipped_estimator_stats(x, b.fisher_events, 1.0);
    out << x << ',' << s.xi << ',' << s.mean << ',' << s.variance_bound << ',' << s.variance_bound / s.delta2 << ','
        << s.variance << ',' << s.mse;
    if (b.monte_carlo_trials > 0) {
      const ClippedMonteCarlo mc = clipped_estimator_monte_carlo(x, b.fisher_events, 1.0, b.monte_carlo_trials,
                                                                 cfg.run.seed, static_cast<std::uint64_t>(i));
      out << ',' << mc.mean << ',' << mc.variance << ',' << mc.mse;
    }
    out << '\n';
  }
  std::cout << "table " << path << '\n';
  return 0;
}

std::vector<G2Sample> read_g2_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<G2Sample> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    G2Sample g;
    char comma = 0;
    if (!(s >> g.separation >> comma >> g.value) || comma != ',') {
      if (row == 1) continue;  // header
      throw ConfigError("fit input: bad row " + std::to_string(row));
    }
    out.push_back(g);
  }
  return out;
}

int cmd_fit_width(const Options& o) {
  const RunConfig cfg = load(o);
  const ImagingSystem sys = make_system(cfg);
  std::vector<G2Sample> samples;
  if (!cfg.fit.input.empty()) {
    samples = read_g2_csv(cfg.fit.input);
  } else {
    const ObjectModel obj = make_object(cfg);
    const double wc = correlation_width(make_source(cfg, obj));
    samples = gaussian_g2_map(wc, sys.magnification(), 1.0, cfg.fit.separations, 3.0 * sys.magnification() * wc,
                              cfg.fit.noise, cfg.run.seed);
  }
  const WidthFit fit = fit_correlation_width(samples, sys.magnification());
  const json doc = {{"format", "qimg-width-fit"},
                    {"version", 1},
                    {"correlation_width_um", fit.correlation_width},
                    {"amplitude", fit.amplitude},
                    {"converged", fit.converged},
                    {"samples", samples.size()}};
  const std::string path = cfg.outputs.path(cfg.outputs.fit);
  open_out(path) << doc.dump(1) << '\n';
  std::cout << std::setprecision(10) << "correlation_width_um " << fit.correlation_width << "\nfit " << path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum-correlation imaging: simulation, Fisher analysis and windowed reconstruction"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "Run configuration (JSON)");
  app.add_option("--seed", o.seed, "Override run.seed")->each([&](const std::string&) { o.seed_set = true; });
  app.add_option("--workers", o.workers, "Worker threads (default: all)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", o.out, "Output directory");
  app.add_flag("--svg", o.svg, "Also write SVG plots");

  auto* sim = app.add_subcommand("simulate", "Synthesize a dataset from the configured phantom");
  auto* rec = app.add_subcommand("reconstruct", "Sliding-window reconstruction of a dataset");
  rec->add_option("--dataset", o.dataset, "Dataset file (default: outputs.dataset)");
  auto* fim = app.add_subcommand("analyze-fim", "Fisher information report");
  fim->add_option("--debug-diagonal", o.debug_diagonal, "Analyse a K x K diagonal test matrix instead");
  auto* sweep = app.add_subcommand("sweep-width", "Correlation-width sweep");
  auto* bias = app.add_subcommand("bias-demo", "Clipped estimator statistics");
  auto* fit = app.add_subcommand("fit-width", "Fit the correlation width of a G2 map");
  app.fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (o.workers > 0) omp_set_num_threads(o.workers);

  try {
    if (*sim) return cmd_simulate(o);
    if (*rec) return cmd_reconstruct(o);
    if (*fim) return cmd_analyze_fim(o);
    if (*sweep) return cmd_sweep_width(o);
    if (*bias) return cmd_bias_demo(o);
    if (*fit) return cmd_fit_width(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const GeometryError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
