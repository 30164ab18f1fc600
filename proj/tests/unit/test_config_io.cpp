#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qimg/config.hpp"
#include "qimg/dataset_io.hpp"
#include "qimg/phantoms.hpp"
#include "qimg/sim.hpp"

using namespace qimg;
using nlohmann::json;

TEST_CASE("config defaults") {
  const RunConfig c = config_from_json(json{{"schema", "qimg-run"}, {"version", 1}});
  CHECK(c.run.order == 2);
  CHECK(c.run.events == 1000000);
  CHECK(c.object.phantom == "three-slit");
  CHECK(c.source.kind == SourceKind::Thermal);
  const ImagingSystem sys = make_system(c);
  CHECK(sys.rayleigh_width() == doctest::Approx(ImagingSystem::thermal_bench().rayleigh_width()));
  const ObjectModel obj = make_object(c);
  CHECK(obj.pixel_size == doctest::Approx(0.5 * sys.rayleigh_width()));
  CHECK(correlation_width(make_source(c, obj)) == doctest::Approx(1.5 * obj.pixel_size));
}

TEST_CASE("config rejects bad documents") {
  CHECK_THROWS_AS(config_from_json(json{{"schema", "other"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"version", 2}}), ConfigError);
  const json base{{"schema", "qimg-run"}, {"version", 1}};
  auto with = [&](const char* key, json value) {
    json j = base;
    j[key] = std::move(value);
    return j;
  };
  CHECK_THROWS_AS(config_from_json(json{{"version", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("bogus", 1)), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("run", {{"ordr", 2}})), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("run", {{"order", "two"}})), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("run", {{"order", 9}})), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("source", {{"correlation_width_um", 20.0}, {"correlation_width_px", 1.0}})),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json(with("object", {{"file", "/nonexistent/phantom.csv"}})), ConfigError);
}

TEST_CASE("config round trip") {
  const json in = {{"schema", "qimg-run"},
                   {"version", 1},
                   {"source", {{"kind", "spdc"}, {"correlation_width_um", 25.0}}},
                   {"run", {{"order", 2}, {"events", 5000}, {"seed", 9}}},
                   {"sweep", {{"points", 9}}}};
  const RunConfig a = config_from_json(in);
  CHECK(a.source.kind == SourceKind::Spdc);
  CHECK(a.run.seed == 9);
  const RunConfig b = config_from_json(config_to_json(a));
  CHECK(config_to_json(a) == config_to_json(b));
}

TEST_CASE("dataset round trip") {
  const double dl = ImagingSystem::thermal_bench().rayleigh_width();
  const ObjectModel truth = make_phantom("three-slit", dl);
  const Experiment ex = make_experiment(truth, ImagingSystem::thermal_bench(), ThermalSource{1.5 * dl}, 2);
  const Dataset ds = synthesize_dataset(truth, ex, 20000, 3);
  std::stringstream ss;
  write_dataset(ss, ds);
  const std::string first = ss.str();
  const Dataset back = read_dataset(ss);
  CHECK(back.data.frequency == ds.data.frequency);
  CHECK(back.data.counts == ds.data.counts);
  CHECK(back.data.probability == ds.data.probability);
  CHECK(back.data.tuples == ds.data.tuples);
  CHECK(back.geometry.transmission == ds.geometry.transmission);
  CHECK(back.experiment.detectors.points.size() == ds.experiment.detectors.points.size());
  std::stringstream again;
  write_dataset(again, back);
  CHECK(again.str() == first);

  SUBCASE("corrupted file") {
    std::stringstream bad(first.substr(0, first.size() / 2));
    CHECK_THROWS_AS(read_dataset(bad), ConfigError);
  }
  SUBCASE("inconsistent sizes") {
    json j = dataset_to_json(ds);
    j["measurement"]["frequency"].erase(0);
    CHECK_THROWS(dataset_from_json(j));
  }
}

TEST_CASE("dataset files") {
  const auto dir = std::filesystem::temp_directory_path() / "qimg_config_io_test";
  std::filesystem::create_directories(dir);
  const double dl = ImagingSystem::thermal_bench().rayleigh_width();
  const ObjectModel truth = make_phantom("three-slit", dl);
  const Experiment ex = make_experiment(truth, ImagingSystem::thermal_bench(), ThermalSource{1.5 * dl}, 2);
  const Dataset ds = synthesize_dataset(truth, ex, 0, 1);
  const std::string path = (dir / "ds.json").string();
  save_dataset(path, ds);
  const Dataset back = load_dataset(path);
  CHECK(back.data.frequency == ds.data.frequency);
  CHECK(back.data.exact());
  CHECK_THROWS_AS(load_dataset((dir / "missing.json").string()), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("phantom files mirror the built-in maps") {
  for (const std::string& name : phantom_names()) {
    const ObjectModel built = make_phantom(name, 10.0);
    const ObjectModel loaded = load_phantom_csv(std::string(QIMG_DATA_DIR) + "/phantoms/" + name + ".csv", 10.0);
    CHECK(loaded.nx == built.nx);
    CHECK(loaded.ny == built.ny);
    CHECK(loaded.transmission == built.transmission);
    CHECK(loaded.origin.x == doctest::Approx(built.origin.x));
  }
}
