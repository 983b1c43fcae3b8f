#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "linresp/error.hpp"
#include "linresp/maps.hpp"
#include "linresp/stats.hpp"

namespace linresp {

using Json = nlohmann::ordered_json;

namespace detail {

/// Strict reader over one JSON object: every key must be consumed by a
/// typed getter before `finish()`, otherwise the config is rejected.
class Section {
 public:
  Section(const Json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    if (!j.is_object()) fail(ErrorKind::config, where() + ": expected an object");
    j_ = &j;
  }

  bool has(const std::string& key) const { return j_ && j_->contains(key); }

  const Json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    used_.insert(key);
    return &(*j_)[key];
  }

  double number(const std::string& key, double fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number()) bad(key, "a number");
    return v->get<double>();
  }

  std::optional<double> optional_number(const std::string& key) {
    const Json* v = raw(key);
    if (!v || v->is_null()) return std::nullopt;
    if (!v->is_number()) bad(key, "a number");
    return v->get<double>();
  }

  long long integer(const std::string& key, long long fallback, long long lo = std::numeric_limits<long long>::min(),
                    long long hi = std::numeric_limits<long long>::max()) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) bad(key, "an integer");
    const auto x = v->get<long long>();
    if (x < lo || x > hi)
      fail(ErrorKind::config, where(key) + ": " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]");
    return x;
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t lo = 0) {
    return static_cast<std::size_t>(integer(key, static_cast<long long>(fallback), static_cast<long long>(lo)));
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (!v->is_number_integer() || v->get<long long>() < 0) bad(key, "a nonnegative integer");
    return static_cast<std::uint64_t>(v->get<long long>());
  }

  bool boolean(const std::string& key, bool fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_boolean()) bad(key, "a boolean");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_string()) bad(key, "a string");
    return v->get<std::string>();
  }

  std::string choice(const std::string& key, const std::string& fallback, std::initializer_list<const char*> allowed) {
    const std::string s = string(key, fallback);
    for (const char* a : allowed)
      if (s == a) return s;
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
    fail(ErrorKind::config, where(key) + ": '" + s + "' is not one of {" + list + "}");
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_array()) bad(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) bad(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  Section child(const std::string& key) {
    const Json* v = raw(key);
    return v ? Section(*v, where(key)) : Section(Json(), where(key));
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items())
      if (!used_.count(k)) fail(ErrorKind::config, where() + ": unknown key '" + k + "'");
  }

 private:
  [[noreturn]] void bad(const std::string& key, const char* what) const {
    fail(ErrorKind::config, where(key) + ": expected " + what);
  }

  const Json* j_ = nullptr;
  std::string path_;
  std::set<std::string> used_;
};

inline void check(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::config, what);
}

}  // namespace detail

struct SystemConfig {
  std::string name = "cat_nonlinear";
  Params params;
  double alpha = 0.0;
};

struct SigmaConfig {
  std::string kind = "uniform";  // uniform | cantor | discrete | mixture
  double lo = 0.0;
  double hi = 1.0;
  double ratio = 1.0 / 3.0;
  int levels = 12;
  std::vector<double> atoms;
  std::vector<double> weights;
  double weight = 0.5;
  std::vector<SigmaConfig> components;
};

/// Every knob of a run. `from_json` validates everything before any
/// computation; `to_json` echoes the fully resolved values.
struct ExperimentConfig {
  SystemConfig system;
  std::string observable = "cos:1,0";
  std::string perturbation = "family";
  std::uint64_t seed = 1;
  int workers = 1;
  int batches = 32;

  struct {
    std::size_t transient = 10000;
    std::size_t length = 50000;
    std::size_t ensemble = 4;
    std::size_t dump_points = 0;
  } sampling;

  struct {
    std::size_t steps = 100000;
    std::size_t reorth_interval = 1;
  } lyapunov;

  struct {
    std::size_t steps = 20000;
    std::size_t warmup = 1000;
  } clv;

  struct {
    std::size_t lags = 20;
    std::string psi;
  } correlate;

  struct {
    std::size_t N = 12;
    std::string route = "forward";
  } susceptibility;

  struct {
    std::string method = "root-test";
    int bootstrap = 200;
    std::size_t window_lo = 0;
    std::size_t window_hi = 0;
    double noise_k = 2.0;
    int L = -1;
    int M = -1;
  } radius;

  struct {
    double h = 0.01;
    bool richardson = false;
    std::string psi_route = "direct";
    std::size_t transient = 10000;
    std::size_t length = 50000;
    std::size_t ensemble = 4;
  } response;

  struct {
    std::size_t N = 10;
    std::size_t refine = 16;
    std::size_t forward = 16;
    std::size_t warmup = 64;
    double arc_step = 1e-3;
    double angle_threshold = 1e-3;
  } split;

  struct {
    std::size_t steps = 100000;
    std::size_t warmup = 1000;
    double angle_threshold = 0.01;
    double cluster_radius = 0.05;
    double radius = 0.05;
    double half_width = 0.1;
    std::size_t refine = 12;
    std::size_t max_leaves = 4000;
    double min_angle = 0.01;
    double projection_radius = 0.2;
    double bandwidth = 0.005;
  } tangency;

  struct {
    std::vector<SigmaConfig> sigmas;
    std::size_t grid = 1 << 14;
    double T = 1.0;
    bool two_sided = false;
    bool cell_average = false;
    std::vector<double> refinements;
    double holder_min_scale = 0.0;
    double holder_max_scale = 0.0;
  } synthetic;

  struct {
    std::vector<SystemConfig> systems;
    std::vector<std::string> observables;  // one per system
  } conjecture;

  std::string output_directory = "linresp_out";

  static ExperimentConfig from_json(const Json& j);
  Json to_json() const;
};

namespace detail {

inline SystemConfig read_system(Section s) {
  SystemConfig sys;
  sys.name = s.string("name", sys.name);
  if (const Json* p = s.raw("params")) {
    if (!p->is_object()) fail(ErrorKind::config, s.where("params") + ": expected an object");
    for (const auto& [k, v] : p->items()) {
      if (!v.is_number()) fail(ErrorKind::config, s.where("params") + "." + k + ": expected a number");
      sys.params[k] = v.get<double>();
    }
  }
  const MapFamily f = make_family(sys.name, sys.params);
  sys.params = f.params;
  sys.alpha = s.number("alpha", f.default_alpha);
  check(std::isfinite(sys.alpha), s.where("alpha") + ": must be finite");
  s.finish();
  return sys;
}

inline Json write_system(const SystemConfig& s) {
  Json p = Json::object();
  for (const auto& [k, v] : s.params) p[k] = v;
  return {{"name", s.name}, {"params", p}, {"alpha", s.alpha}};
}

inline SigmaConfig read_sigma(Section s, int depth = 0) {
  SigmaConfig c;
  c.kind = s.choice("kind", c.kind, {"uniform", "cantor", "discrete", "mixture"});
  if (c.kind == "uniform") {
    c.lo = s.number("lo", c.lo);
    c.hi = s.number("hi", c.hi);
    check(c.hi > c.lo, s.where() + ": uniform needs hi > lo");
  } else if (c.kind == "cantor") {
    c.ratio = s.number("ratio", c.ratio);
    c.levels = static_cast<int>(s.integer("levels", c.levels, 0, 24));
    check(c.ratio > 0.0 && c.ratio < 0.5, s.where("ratio") + ": must lie in (0, 1/2)");
  } else if (c.kind == "discrete") {
    c.atoms = s.numbers("atoms", {});
    c.weights = s.numbers("weights", {});
    check(!c.atoms.empty(), s.where("atoms") + ": at least one atom required");
    if (c.weights.empty()) c.weights.assign(c.atoms.size(), 1.0 / static_cast<double>(c.atoms.size()));
    check(c.weights.size() == c.atoms.size(), s.where("weights") + ": one weight per atom");
    double total = 0.0;
    for (double w : c.weights) {
      check(w >= 0.0, s.where("weights") + ": weights must be nonnegative");
      total += w;
    }
    check(std::abs(total - 1.0) < 1e-9, s.where("weights") + ": weights must sum to 1");
  } else {
    check(depth < 4, s.where() + ": mixtures nested too deeply");
    c.weight = s.number("weight", c.weight);
    check(c.weight >= 0.0 && c.weight <= 1.0, s.where("weight") + ": must lie in [0, 1]");
    const Json* comps = s.raw("components");
    check(comps && comps->is_array() && comps->size() == 2, s.where("components") + ": expected two components");
    for (std::size_t i = 0; i < 2; ++i)
      c.components.push_back(read_sigma(Section((*comps)[i], s.where("components") + "[" + std::to_string(i) + "]"),
                                        depth + 1));
  }
  s.finish();
  return c;
}

inline Json write_sigma(const SigmaConfig& c) {
  Json j = {{"kind", c.kind}};
  if (c.kind == "uniform") {
    j["lo"] = c.lo;
    j["hi"] = c.hi;
  } else if (c.kind == "cantor") {
    j["ratio"] = c.ratio;
    j["levels"] = c.levels;
  } else if (c.kind == "discrete") {
    j["atoms"] = c.atoms;
    j["weights"] = c.weights;
  } else {
    j["weight"] = c.weight;
    j["components"] = Json::array({write_sigma(c.components[0]), write_sigma(c.components[1])});
  }
  return j;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  using detail::check;
  ExperimentConfig c;
  detail::Section root(j, "");
  c.system = detail::read_system(root.child("system"));
  const MapFamily f = make_family(c.system.name, c.system.params);
  c.observable = root.string("observable", c.observable);
  parse_observable(c.observable, f.chart);
  c.perturbation = root.string("perturbation", c.perturbation);
  parse_perturbation(c.perturbation, f, c.system.alpha);
  c.seed = root.seed("seed", c.seed);
  c.workers = static_cast<int>(root.integer("workers", c.workers, 1, 256));
  c.batches = static_cast<int>(root.integer("batches", c.batches, kMinBatches, 1024));

  {
    auto s = root.child("sampling");
    c.sampling.transient = s.count("transient", c.sampling.transient, 1000);
    c.sampling.length = s.count("length", c.sampling.length, 1);
    c.sampling.ensemble = s.count("ensemble", c.sampling.ensemble, 1);
    c.sampling.dump_points = s.count("dump_points", c.sampling.dump_points);
    s.finish();
  }
  {
    auto s = root.child("lyapunov");
    c.lyapunov.steps = s.count("steps", c.lyapunov.steps, 2);
    c.lyapunov.reorth_interval = s.count("reorth_interval", c.lyapunov.reorth_interval, 1);
    s.finish();
  }
  {
    auto s = root.child("clv");
    c.clv.steps = s.count("steps", c.clv.steps, 1);
    c.clv.warmup = s.count("warmup", c.clv.warmup, 1);
    s.finish();
  }
  {
    auto s = root.child("correlate");
    c.correlate.lags = s.count("lags", c.correlate.lags, 1);
    c.correlate.psi = s.string("psi", c.observable);
    parse_observable(c.correlate.psi, f.chart);
    s.finish();
  }
  {
    auto s = root.child("susceptibility");
    c.susceptibility.N = s.count("N", c.susceptibility.N, 1);
    c.susceptibility.route = s.choice("route", c.susceptibility.route, {"forward", "adjoint"});
    s.finish();
  }
  {
    auto s = root.child("radius");
    c.radius.method = s.choice("method", c.radius.method, {"root-test", "ratio-test", "pade-pole"});
    c.radius.bootstrap = static_cast<int>(s.integer("bootstrap", c.radius.bootstrap, 0, 100000));
    c.radius.window_lo = s.count("window_lo", c.radius.window_lo);
    c.radius.window_hi = s.count("window_hi", c.radius.window_hi);
    c.radius.noise_k = s.number("noise_k", c.radius.noise_k);
    c.radius.L = static_cast<int>(s.integer("L", c.radius.L, -1, 200));
    c.radius.M = static_cast<int>(s.integer("M", c.radius.M, -1, 200));
    check(c.radius.noise_k >= 0.0, s.where("noise_k") + ": must be nonnegative");
    check(c.radius.window_hi == 0 || c.radius.window_hi >= c.radius.window_lo,
          s.where("window_hi") + ": must not be below window_lo");
    s.finish();
  }
  {
    auto s = root.child("response");
    c.response.h = s.number("h", c.response.h);
    c.response.richardson = s.boolean("richardson", c.response.richardson);
    c.response.psi_route = s.choice("psi_route", c.response.psi_route, {"direct", "split"});
    c.response.transient = s.count("transient", c.sampling.transient, 1000);
    c.response.length = s.count("length", c.sampling.length, 1);
    c.response.ensemble = s.count("ensemble", c.sampling.ensemble, 1);
    check(c.response.h > 0.0, s.where("h") + ": must be positive");
    s.finish();
  }
  {
    auto s = root.child("split");
    c.split.N = s.count("N", c.split.N, 1);
    c.split.refine = s.count("refine", c.split.refine, 1);
    c.split.forward = s.count("forward", c.split.forward, 1);
    c.split.warmup = s.count("warmup", c.split.warmup, 0);
    c.split.arc_step = s.number("arc_step", c.split.arc_step);
    c.split.angle_threshold = s.number("angle_threshold", c.split.angle_threshold);
    check(c.split.arc_step > 0.0, s.where("arc_step") + ": must be positive");
    check(c.split.angle_threshold >= 0.0, s.where("angle_threshold") + ": must be nonnegative");
    s.finish();
  }
  {
    auto s = root.child("tangency");
    auto& t = c.tangency;
    t.steps = s.count("steps", t.steps, 1);
    t.warmup = s.count("warmup", t.warmup, 1);
    t.angle_threshold = s.number("angle_threshold", t.angle_threshold);
    t.cluster_radius = s.number("cluster_radius", t.cluster_radius);
    t.radius = s.number("radius", t.radius);
    t.half_width = s.number("half_width", t.half_width);
    t.refine = s.count("refine", t.refine, 1);
    t.max_leaves = s.count("max_leaves", t.max_leaves, 1);
    t.min_angle = s.number("min_angle", t.min_angle);
    t.projection_radius = s.number("projection_radius", t.projection_radius);
    t.bandwidth = s.number("bandwidth", t.bandwidth);
    check(t.angle_threshold >= 0.0, s.where("angle_threshold") + ": must be nonnegative");
    check(t.cluster_radius > 0.0 && t.radius > 0.0 && t.half_width > 0.0,
          s.where() + ": cluster_radius, radius and half_width must be positive");
    check(t.min_angle >= 0.0, s.where("min_angle") + ": must be nonnegative");
    check(t.bandwidth > 0.0, s.where("bandwidth") + ": must be positive");
    check(t.projection_radius > 0.0, s.where("projection_radius") + ": must be positive");
    s.finish();
  }
  {
    auto s = root.child("synthetic");
    auto& y = c.synthetic;
    if (const Json* list = s.raw("sigmas")) {
      check(list->is_array() && !list->empty(), s.where("sigmas") + ": expected a nonempty array");
      for (std::size_t i = 0; i < list->size(); ++i)
        y.sigmas.push_back(detail::read_sigma(detail::Section((*list)[i], s.where("sigmas") + "[" +
                                                                              std::to_string(i) + "]")));
    } else {
      SigmaConfig cantor;
      cantor.kind = "cantor";
      y.sigmas = {SigmaConfig{}, cantor};
    }
    y.grid = s.count("grid", y.grid, 1 << 10);
    check(y.grid <= (1u << 24), s.where("grid") + ": at most 2^24");
    y.T = s.number("T", y.T);
    y.two_sided = s.boolean("two_sided", y.two_sided);
    y.cell_average = s.boolean("cell_average", y.cell_average);
    y.refinements = s.numbers("refinements", {});
    for (double g : y.refinements)
      check(g >= 1024 && g <= (1 << 24) && g == std::floor(g),
            s.where("refinements") + ": grid sizes must be integers in [2^10, 2^24]");
    y.holder_min_scale = s.number("holder_min_scale", y.holder_min_scale);
    y.holder_max_scale = s.number("holder_max_scale", y.holder_max_scale);
    check(y.T > 0.0, s.where("T") + ": must be positive");
    check(y.holder_min_scale >= 0.0 && y.holder_max_scale >= 0.0, s.where() + ": holder scales must be nonnegative");
    s.finish();
  }
  {
    auto s = root.child("conjecture");
    if (const Json* list = s.raw("systems")) {
      check(list->is_array() && !list->empty(), s.where("systems") + ": expected a nonempty array");
      for (std::size_t i = 0; i < list->size(); ++i)
        c.conjecture.systems.push_back(
            detail::read_system(detail::Section((*list)[i], s.where("systems") + "[" + std::to_string(i) + "]")));
    } else {
      c.conjecture.systems = {detail::read_system(detail::Section(Json{{"name", "cat_nonlinear"}}, "")),
                              detail::read_system(detail::Section(Json{{"name", "henon"}}, ""))};
    }
    auto& sys = c.conjecture.systems;
    if (const Json* list = s.raw("observables")) {
      check(list->is_array() && list->size() == sys.size(),
            s.where("observables") + ": expected one observable per system");
      for (std::size_t i = 0; i < list->size(); ++i) {
        check((*list)[i].is_string(), s.where("observables") + "[" + std::to_string(i) + "]: expected a string");
        const auto spec = (*list)[i].get<std::string>();
        parse_observable(spec, make_family(sys[i].name, sys[i].params).chart);
        c.conjecture.observables.push_back(spec);
      }
    } else {
      for (const auto& y : sys)
        c.conjecture.observables.push_back(observable_catalog(make_family(y.name, y.params).chart)[1].name);
    }
    s.finish();
  }
  {
    auto s = root.child("output");
    c.output_directory = s.string("directory", c.output_directory);
    check(!c.output_directory.empty(), s.where("directory") + ": must not be empty");
    s.finish();
  }
  root.finish();
  return c;
}

inline Json ExperimentConfig::to_json() const {
  Json sig = Json::array();
  for (const auto& s : synthetic.sigmas) sig.push_back(detail::write_sigma(s));
  Json systems = Json::array();
  for (const auto& s : conjecture.systems) systems.push_back(detail::write_system(s));
  return {
      {"system", detail::write_system(system)},
      {"observable", observable},
      {"perturbation", perturbation},
      {"seed", seed},
      {"workers", workers},
      {"batches", batches},
      {"sampling",
       {{"transient", sampling.transient},
        {"length", sampling.length},
        {"ensemble", sampling.ensemble},
        {"dump_points", sampling.dump_points}}},
      {"lyapunov", {{"steps", lyapunov.steps}, {"reorth_interval", lyapunov.reorth_interval}}},
      {"clv", {{"steps", clv.steps}, {"warmup", clv.warmup}}},
      {"correlate", {{"lags", correlate.lags}, {"psi", correlate.psi}}},
      {"susceptibility", {{"N", susceptibility.N}, {"route", susceptibility.route}}},
      {"radius",
       {{"method", radius.method},
        {"bootstrap", radius.bootstrap},
        {"window_lo", radius.window_lo},
        {"window_hi", radius.window_hi},
        {"noise_k", radius.noise_k},
        {"L", radius.L},
        {"M", radius.M}}},
      {"response",
       {{"h", response.h},
        {"richardson", response.richardson},
        {"psi_route", response.psi_route},
        {"transient", response.transient},
        {"length", response.length},
        {"ensemble", response.ensemble}}},
      {"split",
       {{"N", split.N},
        {"refine", split.refine},
        {"forward", split.forward},
        {"warmup", split.warmup},
        {"arc_step", split.arc_step},
        {"angle_threshold", split.angle_threshold}}},
      {"tangency",
       {{"steps", tangency.steps},
        {"warmup", tangency.warmup},
        {"angle_threshold", tangency.angle_threshold},
        {"cluster_radius", tangency.cluster_radius},
        {"radius", tangency.radius},
        {"half_width", tangency.half_width},
        {"refine", tangency.refine},
        {"max_leaves", tangency.max_leaves},
        {"min_angle", tangency.min_angle},
        {"projection_radius", tangency.projection_radius},
        {"bandwidth", tangency.bandwidth}}},
      {"synthetic",
       {{"sigmas", sig},
        {"grid", synthetic.grid},
        {"T", synthetic.T},
        {"two_sided", synthetic.two_sided},
        {"cell_average", synthetic.cell_average},
        {"refinements", synthetic.refinements},
        {"holder_min_scale", synthetic.holder_min_scale},
        {"holder_max_scale", synthetic.holder_max_scale}}},
      {"conjecture", {{"systems", systems}, {"observables", conjecture.observables}}},
      {"output", {{"directory", output_directory}}},
  };
}

}  // namespace linresp
