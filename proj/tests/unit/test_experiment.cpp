#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "linresp/experiment.hpp"

using namespace linresp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("linresp_test_" + name);
  fs::remove_all(p);
  return p;
}

Json small(const std::string& system = "cat_nonlinear") {
  return {{"system", {{"name", system}}},
          {"sampling", {{"transient", 1000}, {"length", 2000}, {"ensemble", 2}}},
          {"lyapunov", {{"steps", 2000}}},
          {"clv", {{"steps", 1000}, {"warmup", 100}}},
          {"correlate", {{"lags", 5}}},
          {"susceptibility", {{"N", 8}}},
          {"radius", {{"bootstrap", 20}}},
          {"response", {{"length", 2000}, {"ensemble", 2}}},
          {"split", {{"N", 8}}},
          {"tangency", {{"steps", 20000}, {"warmup", 200}, {"max_leaves", 400}}},
          {"synthetic", {{"grid", 1024}, {"refinements", {1024, 2048}}}},
          {"conjecture", {{"systems", {{{"name", "cat_nonlinear"}}}}}}};
}

ExperimentConfig with_dir(Json j, const fs::path& dir) {
  j["output"] = {{"directory", dir.string()}};
  return ExperimentConfig::from_json(j);
}

ErrorKind config_error_kind(const Json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("config accepted");
  return ErrorKind::precondition;
}

std::map<std::string, std::string> read_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name != "manifest.json") out[name] = io::read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults resolve", "[config]") {
  const auto c = ExperimentConfig::from_json(Json::object());
  REQUIRE(c.system.name == "cat_nonlinear");
  REQUIRE(c.system.alpha == make_family("cat_nonlinear").default_alpha);
  REQUIRE(c.batches == kDefaultBatches);
  REQUIRE(c.synthetic.sigmas.size() == 2);
  REQUIRE(c.conjecture.systems.size() == c.conjecture.observables.size());
  REQUIRE(c.correlate.psi == c.observable);
}

TEST_CASE("unknown and malformed keys are rejected", "[config]") {
  REQUIRE(config_error_kind({{"sead", 3}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"sampling", {{"lenght", 10}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"system", {{"name", "henon"}, {"params", {{"c", 1.0}}}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"system", {{"name", "lorenz"}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"observable", "cos:1"}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"workers", 0}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"batches", 4}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"seed", -1}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"sampling", {{"length", "many"}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"sampling", {{"length", 2.5}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"radius", {{"method", "guess"}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"response", {{"h", 0.0}}}}) == ErrorKind::config);
  REQUIRE(config_error_kind({{"synthetic", {{"sigmas", {{{"kind", "cantor"}, {"ratio", 0.7}}}}}}}) ==
          ErrorKind::config);
  REQUIRE(config_error_kind({{"conjecture", {{"observables", {"cos:1,0", "cos:0,1", "cos:1,1"}}}}}) ==
          ErrorKind::config);
}

TEST_CASE("resolved config round-trips", "[config]") {
  Json j = small();
  j["synthetic"]["sigmas"] = {{{"kind", "mixture"},
                               {"weight", 0.25},
                               {"components", {{{"kind", "uniform"}, {"lo", 0.0}, {"hi", 0.5}},
                                               {{"kind", "discrete"}, {"atoms", {0.1, 0.9}}, {"weights", {0.5, 0.5}}}}}}};
  const auto a = ExperimentConfig::from_json(j).to_json();
  const auto b = ExperimentConfig::from_json(a).to_json();
  REQUIRE(a == b);
  REQUIRE(a["system"]["alpha"].get<double>() == 0.3);
}

TEST_CASE("load_config reports missing and malformed files", "[config]") {
  const auto dir = scratch("load");
  fs::create_directories(dir);
  REQUIRE_THROWS_AS(load_config(dir / "absent.json"), Error);
  io::write_file(dir / "bad.json", "{\"seed\": ");
  try {
    load_config(dir / "bad.json");
    FAIL("parsed");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("every subcommand writes outputs and a matching manifest", "[experiment]") {
  for (const auto& [name, runner] : subcommands()) {
    INFO(name);
    const auto dir = scratch("run_" + name);
    const Json j = small(name == "tangency" ? "henon" : "cat_nonlinear");
    const auto r = run_experiment(name, with_dir(j, dir));
    REQUIRE(r.status == 0);
    REQUIRE(fs::exists(dir / "manifest.json"));
    REQUIRE_FALSE(fs::exists(dir / "error.json"));
    const Json m = Json::parse(io::read_file(dir / "manifest.json"));
    REQUIRE(m["subcommand"] == name);
    REQUIRE(m["version"] == kArtifactVersion);
    REQUIRE(m["files"].size() == r.files.size());
    REQUIRE(r.files.back() == "resolved_config.json");
    for (const auto& f : m["files"]) {
      const std::string body = io::read_file(dir / f["name"].get<std::string>());
      REQUIRE(f["sha256"] == io::sha256_hex(body));
      REQUIRE(f["bytes"].get<std::size_t>() == body.size());
    }
    for (const auto& e : fs::directory_iterator(dir)) REQUIRE(e.path().extension() != ".partial");
  }
}

TEST_CASE("csv outputs parse with the declared header", "[experiment]") {
  const auto dir = scratch("csv");
  REQUIRE(run_experiment("susceptibility", with_dir(small(), dir)).status == 0);
  const auto rows = io::read_csv(io::read_file(dir / "susceptibility.csv"));
  REQUIRE(rows.front() == std::vector<std::string>{"n", "kappa", "stderr"});
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 1; i < rows.size(); ++i) REQUIRE(std::stoi(rows[i][0]) == static_cast<int>(i - 1));
}

TEST_CASE("re-runs are byte identical", "[experiment]") {
  for (const std::string name : {"srb", "split", "fold-synthetic", "radius"}) {
    INFO(name);
    const auto a = scratch("det_a"), b = scratch("det_b");
    REQUIRE(run_experiment(name, with_dir(small(), a)).status == 0);
    REQUIRE(run_experiment(name, with_dir(small(), b)).status == 0);
    auto ra = read_outputs(a), rb = read_outputs(b);
    // the resolved config records the directory, which differs by design
    ra.erase("resolved_config.json");
    rb.erase("resolved_config.json");
    REQUIRE(ra == rb);
  }
}

TEST_CASE("worker count does not change data files", "[experiment]") {
  for (const std::string name : {"susceptibility", "split", "fold-synthetic"}) {
    INFO(name);
    const auto a = scratch("w1"), b = scratch("w3");
    Json one = small(), three = small();
    three["workers"] = 3;
    REQUIRE(run_experiment(name, with_dir(one, a)).status == 0);
    REQUIRE(run_experiment(name, with_dir(three, b)).status == 0);
    auto ra = read_outputs(a), rb = read_outputs(b);
    ra.erase("resolved_config.json");
    rb.erase("resolved_config.json");
    REQUIRE(ra == rb);
  }
}

TEST_CASE("a different seed changes sampled outputs", "[experiment]") {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  Json other = small();
  other["seed"] = 2;
  REQUIRE(run_experiment("srb", with_dir(small(), a)).status == 0);
  REQUIRE(run_experiment("srb", with_dir(other, b)).status == 0);
  REQUIRE(io::read_file(a / "srb.csv") != io::read_file(b / "srb.csv"));
}

TEST_CASE("failures write error.json and map to exit codes", "[experiment]") {
  const auto dir = scratch("fail");
  Json j = small("coupled_henon");
  j["observable"] = "coord:0";
  const auto r = run_experiment("split", with_dir(j, dir));
  REQUIRE(r.status == exit_code(ErrorKind::unsupported));
  REQUIRE_FALSE(fs::exists(dir / "manifest.json"));
  const Json e = Json::parse(io::read_file(dir / "error.json"));
  REQUIRE(e["kind"] == "unsupported");
  REQUIRE(e["exit_code"] == r.status);

  // a later success clears the stale error
  REQUIRE(run_experiment("srb", with_dir(small(), dir)).status == 0);
  REQUIRE_FALSE(fs::exists(dir / "error.json"));
  REQUIRE(fs::exists(dir / "manifest.json"));
}

TEST_CASE("exit codes are distinct per error kind", "[experiment]") {
  std::set<int> codes;
  for (auto k : {ErrorKind::config, ErrorKind::numerical_degeneracy, ErrorKind::basin_escape,
                 ErrorKind::insufficient_data, ErrorKind::hyperbolicity, ErrorKind::unsupported,
                 ErrorKind::precondition})
    codes.insert(exit_code(k));
  REQUIRE(codes.size() == 7);
  REQUIRE_FALSE(codes.count(0));
  REQUIRE_FALSE(codes.count(1));
}

TEST_CASE("unknown subcommand is a config error", "[experiment]") {
  REQUIRE_THROWS_AS(run_experiment("fit-everything", with_dir(small(), scratch("unknown"))), Error);
}

TEST_CASE("environment overrides the output directory", "[experiment]") {
  const auto config_dir = scratch("env_config"), env_dir = scratch("env_target");
  ::setenv(kOutputDirEnv, env_dir.c_str(), 1);
  const auto r = run_experiment("srb", with_dir(small(), config_dir));
  ::unsetenv(kOutputDirEnv);
  REQUIRE(r.status == 0);
  REQUIRE(r.directory == env_dir);
  REQUIRE(fs::exists(env_dir / "manifest.json"));
  REQUIRE_FALSE(fs::exists(config_dir));
}

TEST_CASE("synthetic run reports predicted exponents", "[experiment]") {
  const auto dir = scratch("synthetic");
  REQUIRE(run_experiment("fold-synthetic", with_dir(small(), dir)).status == 0);
  const Json j = Json::parse(io::read_file(dir / "fold_synthetic.json"));
  REQUIRE(j["sigmas"].size() == 2);
  REQUIRE(j["sigmas"][0]["predicted_exponent"].get<double>() == Catch::Approx(0.5));
  REQUIRE(j["sigmas"][1]["predicted_exponent"].get<double>() ==
          Catch::Approx(std::log(2.0) / std::log(3.0) - 0.5).epsilon(1e-9));
  REQUIRE(j["sigmas"][0]["refinement"].size() == 2);
  const auto rows = io::read_csv(io::read_file(dir / "fold_synthetic_0.csv"));
  REQUIRE(rows.size() == 1026);
  const double theta = std::stod(rows[512][0]), delta = std::stod(rows[512][1]);
  REQUIRE(delta == Catch::Approx(2.0 * std::sqrt(theta)).epsilon(1e-9));
}
