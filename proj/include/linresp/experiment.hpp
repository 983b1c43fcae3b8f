#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "linresp/config.hpp"
#include "linresp/io.hpp"
#include "linresp/measure.hpp"
#include "linresp/response.hpp"
#include "linresp/tangency.hpp"
#include "linresp/tangent.hpp"

namespace linresp {

inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr const char* kOutputDirEnv = "LINRESP_OUTPUT_DIR";

/// Process exit status for each failure kind.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::numerical_degeneracy: return 3;
    case ErrorKind::basin_escape: return 4;
    case ErrorKind::insufficient_data: return 5;
    case ErrorKind::hyperbolicity: return 6;
    case ErrorKind::unsupported: return 7;
    case ErrorKind::precondition: return 8;
  }
  return 1;
}

/// Files produced by one subcommand, in emission order, plus the report
/// counters that end up in the manifest.
struct RunOutput {
  std::vector<std::pair<std::string, std::string>> files;
  std::map<std::string, std::uint64_t> steps;

  void add(const std::string& name, std::string body) { files.emplace_back(name, std::move(body)); }
  void add_json(const std::string& name, const Json& j) { add(name, j.dump(2) + "\n"); }
};

namespace detail {

/// NaN and infinities have no JSON spelling; emit null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json estimate_json(const Estimate& e) { return {{"value", num(e.value)}, {"std_error", num(e.std_error)}}; }

inline Json complex_list(const std::vector<Complex>& zs) {
  Json a = Json::array();
  for (const auto& z : zs) a.push_back({num(z.real()), num(z.imag())});
  return a;
}

inline Json spectrum_json(const LyapunovSpectrum& s) {
  return {{"exponents", s.exponents},   {"std_errors", s.std_errors}, {"levels", s.levels},
          {"multiplicities", s.multiplicities}, {"sum", s.sum()},      {"mean_log_det", s.mean_log_det},
          {"sum_rule_residual", s.sum() - s.mean_log_det}, {"steps", s.steps}};
}

inline Json dimension_json(const DimensionEstimate& d) {
  return {{"kaplan_yorke", d.kaplan_yorke}, {"stable_dim", d.stable_dim},       {"stable_lo", d.stable_lo},
          {"stable_hi", d.stable_hi},       {"uncertainty", d.uncertainty},     {"method", d.method},
          {"unstable_count", d.unstable_count}, {"stable_count", d.stable_count}};
}

inline Json fit_json(const DecayFit& f) {
  if (!f.defined) return {{"defined", false}};
  return {{"defined", true},       {"rate", f.rate},         {"rate_error", f.rate_error},
          {"ci", {f.ci_lo, f.ci_hi}}, {"r_squared", f.r_squared}, {"lags", {f.lag_lo, f.lag_hi}},
          {"points", f.points}};
}

inline Json radius_json(const RadiusEstimate& r) {
  return {{"method", r.method},
          {"value", num(r.value)},
          {"ci", {num(r.ci_lo), num(r.ci_hi)}},
          {"infinite", r.infinite},
          {"indeterminate", r.indeterminate},
          {"window", {r.window_lo, r.window_hi}},
          {"usable_fraction", r.usable_fraction},
          {"pade", {r.pade_L, r.pade_M}},
          {"stable_poles", complex_list(r.stable_poles)},
          {"screened_poles", complex_list(r.screened_poles)},
          {"notes", r.notes}};
}

inline Json holder_json(const HolderEstimate& h) {
  return {{"exponent", h.exponent},   {"intercept", h.intercept}, {"std_error", h.std_error},
          {"ci", {h.ci_lo, num(h.ci_hi)}}, {"residual", h.residual}, {"scales", {h.scale_lo, h.scale_hi}},
          {"decades", h.decades},     {"capped", h.capped},       {"at_noise_floor", h.at_noise_floor},
          {"monotone", h.monotone},   {"reliable", h.reliable}};
}

inline Json counting_json(const CountingFunction& c) {
  return {{"points", c.thetas.size()},
          {"exponent", c.exponent},
          {"std_error", c.std_error},
          {"ci", {c.ci_lo, c.ci_hi}},
          {"holder_constant", c.holder_constant},
          {"atomic", c.atomic},
          {"reliable", c.reliable}};
}

inline io::CsvTable series_table(const SusceptibilitySeries& s) {
  io::CsvTable t({"n", "kappa", "stderr"});
  for (std::size_t n = 0; n < s.size(); ++n)
    t.row({static_cast<long long>(n), s.coefficients[n], s.std_errors[n]});
  return t;
}

inline Json series_json(const SusceptibilitySeries& s) {
  const PsiValue p = psi_eval(s, 1.0);
  return {{"system", s.system},     {"observable", s.observable}, {"field", s.field},
          {"route", s.route},       {"order", s.order()},         {"samples", s.samples},
          {"warnings", s.warnings}, {"psi1", {{"value", num(p.value.real())}, {"std_error", num(p.std_error)}}}};
}

/// Everything a run needs, built once from the validated config.
struct Context {
  const ExperimentConfig& cfg;
  MapFamily family;
  double alpha;
  Observable phi;
  PerturbationField field;

  explicit Context(const ExperimentConfig& c)
      : cfg(c),
        family(make_family(c.system.name, c.system.params)),
        alpha(c.system.alpha),
        phi(parse_observable(c.observable, family.chart)),
        field(parse_perturbation(c.perturbation, family, alpha)) {}

  std::uint64_t seed_for(std::uint64_t tag) const { return derive_seed(cfg.seed, tag); }

  EmpiricalMeasure measure(RunOutput& out, std::size_t length, std::size_t ensemble, std::uint64_t tag = 0) const {
    const auto& s = cfg.sampling;
    out.steps["map_steps"] += ensemble * (s.transient + length);
    return srb_sample(family, alpha, InitialSampler::for_family(family, seed_for(tag)), s.transient, length, ensemble,
                      cfg.workers);
  }
  EmpiricalMeasure measure(RunOutput& out) const { return measure(out, cfg.sampling.length, cfg.sampling.ensemble); }

  Trajectory single_orbit(RunOutput& out, std::size_t points, std::uint64_t tag) const {
    return measure(out, points, 1, tag).orbits.front();
  }

  SusceptibilityOptions sus_options() const { return {cfg.batches, cfg.workers}; }

  SusceptibilitySeries series(RunOutput& out, const EmpiricalMeasure& m, std::size_t N) const {
    out.steps["tangent_steps"] += m.size() * (N + 1);
    return cfg.susceptibility.route == "adjoint" ? susceptibility_adjoint(m, field, phi, N, sus_options())
                                                 : susceptibility_coefficients(m, field, phi, N, sus_options());
  }

  RadiusOptions radius_options() const {
    RadiusOptions r;
    const auto& c = cfg.radius;
    r.method = c.method == "ratio-test"  ? RadiusOptions::ratio_test
               : c.method == "pade-pole" ? RadiusOptions::pade_pole
                                         : RadiusOptions::root_test;
    r.window_lo = c.window_lo;
    r.window_hi = c.window_hi;
    r.noise_k = c.noise_k;
    r.bootstrap = c.bootstrap;
    r.seed = seed_for(7);
    r.L = c.L;
    r.M = c.M;
    return r;
  }

  SplitOptions split_options() const {
    SplitOptions o;
    o.refine = cfg.split.refine;
    o.forward = cfg.split.forward;
    o.warmup = cfg.split.warmup;
    o.arc_step = cfg.split.arc_step;
    o.angle_threshold = cfg.split.angle_threshold;
    o.batches = cfg.batches;
    o.workers = cfg.workers;
    return o;
  }
};

inline SigmaSpec make_sigma(const SigmaConfig& c) {
  if (c.kind == "uniform") return SigmaSpec::uniform(c.lo, c.hi);
  if (c.kind == "cantor") return SigmaSpec::cantor(c.ratio, c.levels);
  if (c.kind == "discrete") return SigmaSpec::discrete(c.atoms, c.weights);
  return SigmaSpec::mixture(c.weight, make_sigma(c.components[0]), make_sigma(c.components[1]));
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline void run_lyapunov(const Context& ctx, RunOutput& out) {
  const auto& c = ctx.cfg.lyapunov;
  const Trajectory orbit = ctx.single_orbit(out, c.steps + 1, 1);
  const TangentCocycle cocycle(ctx.family, ctx.alpha, orbit);
  const LyapunovSpectrum s = benettin_spectrum(cocycle, c.steps, c.reorth_interval, std::nullopt, ctx.cfg.batches);
  out.steps["tangent_steps"] += c.steps;
  io::CsvTable t({"index", "exponent", "stderr"});
  for (std::size_t i = 0; i < s.exponents.size(); ++i) t.row({static_cast<long long>(i), s.exponents[i], s.std_errors[i]});
  out.add("lyapunov.csv", t.str());
  Json j = {{"system", ctx.family.name}, {"alpha", ctx.alpha}, {"spectrum", spectrum_json(s)}};
  try {
    j["dimensions"] = dimension_json(dimension_estimates(s));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::hyperbolicity) throw;
    j["dimensions"] = {{"error", e.what()}};
  }
  out.add_json("lyapunov.json", j);
}

inline void run_clv(const Context& ctx, RunOutput& out) {
  const auto& c = ctx.cfg.clv;
  const Trajectory orbit = ctx.single_orbit(out, c.steps + 2 * c.warmup + 1, 2);
  const TangentCocycle cocycle(ctx.family, ctx.alpha, orbit);
  const OseledetsSplitting split = compute_clvs(cocycle, c.steps, c.warmup);
  out.steps["tangent_steps"] += c.steps + 2 * c.warmup;
  const ClvDiagnostics diag = clv_covariance(cocycle, split);
  const AngleSeries angles = splitting_angles(split);
  io::CsvTable t({"step", "angle"});
  for (std::size_t i = 0; i < angles.angles.size(); ++i)
    t.row({static_cast<long long>(angles.offset + i), angles.angles[i]});
  out.add("clv_angles.csv", t.str());
  out.add_json("clv.json", {{"system", ctx.family.name},
                            {"alpha", ctx.alpha},
                            {"unstable_dim", split.unstable_dim},
                            {"spectrum", spectrum_json(split.spectrum)},
                            {"min_angle", angles.min()},
                            {"covariance",
                             {{"max_unstable_residual", diag.max_unstable_residual},
                              {"max_stable_residual", diag.max_stable_residual},
                              {"mean_unstable_residual", diag.mean_unstable_residual},
                              {"mean_stable_residual", diag.mean_stable_residual}}}});
}

inline void run_srb(const Context& ctx, RunOutput& out) {
  const EmpiricalMeasure m = ctx.measure(out);
  io::CsvTable t({"observable", "mean", "stderr"});
  auto catalog = observable_catalog(ctx.family.chart);
  catalog.insert(catalog.begin(), ctx.phi);
  for (const auto& phi : catalog) {
    const Estimate e = birkhoff_average(m, phi, ctx.cfg.batches);
    t.row({phi.name, e.value, e.std_error});
  }
  out.add("srb.csv", t.str());
  if (ctx.cfg.sampling.dump_points > 0) {
    std::vector<std::string> header{"orbit", "step"};
    for (int i = 0; i < ctx.family.dimension; ++i) header.push_back("x" + std::to_string(i));
    io::CsvTable pts(header);
    std::size_t left = ctx.cfg.sampling.dump_points;
    for (std::size_t o = 0; o < m.orbits.size() && left; ++o)
      for (std::size_t j = 0; j < m.orbits[o].size() && left; ++j, --left) {
        std::vector<io::Cell> row{static_cast<long long>(o), static_cast<long long>(j)};
        for (int i = 0; i < ctx.family.dimension; ++i) row.emplace_back(m.orbits[o].coord(j, i));
        pts.row(std::move(row));
      }
    out.add("srb_points.csv", pts.str());
  }
  out.add_json("srb.json", {{"system", ctx.family.name},
                            {"alpha", ctx.alpha},
                            {"points", m.size()},
                            {"orbits", m.orbits.size()},
                            {"escaped", m.escaped}});
}

inline void run_correlate(const Context& ctx, RunOutput& out) {
  const EmpiricalMeasure m = ctx.measure(out);
  const Observable psi = parse_observable(ctx.cfg.correlate.psi, ctx.family.chart);
  const CorrelationSeries c = correlation(m, psi, ctx.phi, ctx.cfg.correlate.lags, 1, 0, ctx.cfg.batches);
  io::CsvTable t({"n", "C", "stderr"});
  for (std::size_t n = 0; n < c.lags(); ++n) t.row({static_cast<long long>(n), c.values[n], c.std_errors[n]});
  out.add("correlation.csv", t.str());
  out.add_json("correlation.json", {{"system", ctx.family.name},
                                    {"psi", psi.name},
                                    {"phi", ctx.phi.name},
                                    {"lags", c.lags() - 1},
                                    {"decay", fit_json(c.fit)}});
}

inline void run_susceptibility(const Context& ctx, RunOutput& out) {
  const EmpiricalMeasure m = ctx.measure(out);
  const SusceptibilitySeries s = ctx.series(out, m, ctx.cfg.susceptibility.N);
  out.add("susceptibility.csv", series_table(s).str());
  out.add_json("susceptibility.json", series_json(s));
}

inline void run_radius(const Context& ctx, RunOutput& out) {
  const EmpiricalMeasure m = ctx.measure(out);
  const SusceptibilitySeries s = ctx.series(out, m, ctx.cfg.susceptibility.N);
  out.add("susceptibility.csv", series_table(s).str());
  const RadiusEstimate r = radius_estimate(s, ctx.radius_options());
  out.add_json("radius.json", {{"series", series_json(s)}, {"radius", radius_json(r)}});
}

inline void run_response_check(const Context& ctx, RunOutput& out) {
  const auto& c = ctx.cfg.response;
  const EmpiricalMeasure m = ctx.measure(out);
  Json psi_meta;
  SusceptibilitySeries s;
  if (c.psi_route == "split") {
    const SplitResult r = stable_unstable_split(m, ctx.field, ctx.phi, ctx.cfg.split.N, ctx.split_options());
    out.steps["tangent_steps"] += r.samples * (ctx.cfg.split.N + 1);
    s = r.reconstructed;
    psi_meta = {{"excluded", r.excluded}, {"excluded_mass", r.excluded_mass}};
  } else {
    s = ctx.series(out, m, ctx.cfg.susceptibility.N);
  }
  const PsiValue p = psi_eval(s, 1.0);
  FiniteDifferenceOptions fd;
  fd.transient = c.transient;
  fd.length = c.length;
  fd.ensemble = c.ensemble;
  fd.seed = ctx.seed_for(3);
  fd.batches = ctx.cfg.batches;
  fd.workers = ctx.cfg.workers;
  fd.richardson = c.richardson;
  out.steps["map_steps"] += (c.richardson ? 4 : 2) * c.ensemble * (c.transient + c.length);
  const FiniteDifferenceResponse d = finite_difference_response(ctx.family, ctx.alpha, c.h, ctx.phi, fd);
  const Estimate derivative = d.richardson ? *d.richardson : d.derivative;
  const ResponseComparison cmp = compare_response({p.value.real(), p.std_error}, derivative);
  out.add("susceptibility.csv", series_table(s).str());
  Json fdj = {{"h", d.h},
              {"plus", estimate_json(d.plus)},
              {"minus", estimate_json(d.minus)},
              {"derivative", estimate_json(d.derivative)},
              {"escaped", d.escaped}};
  if (d.richardson) fdj["richardson"] = estimate_json(*d.richardson);
  out.add_json("response_check.json", {{"system", ctx.family.name},
                                       {"alpha", ctx.alpha},
                                       {"observable", ctx.phi.name},
                                       {"psi_route", c.psi_route},
                                       {"psi1", estimate_json(cmp.psi)},
                                       {"psi_route_details", psi_meta},
                                       {"finite_difference", fdj},
                                       {"sigma", num(cmp.sigma)},
                                       {"agree_3sigma", cmp.agree}});
}

inline void run_split(const Context& ctx, RunOutput& out) {
  const EmpiricalMeasure m = ctx.measure(out);
  const std::size_t N = ctx.cfg.split.N;
  const SplitResult r = stable_unstable_split(m, ctx.field, ctx.phi, N, ctx.split_options());
  out.steps["tangent_steps"] += r.samples * (N + 1);
  io::CsvTable t({"n", "direct", "direct_se", "stable", "stable_se", "unstable", "unstable_se", "reconstructed",
                  "reconstructed_se", "difference", "difference_se"});
  for (std::size_t n = 0; n <= N && n < r.direct.size(); ++n)
    t.row({static_cast<long long>(n), r.direct.coefficients[n], r.direct.std_errors[n], r.stable.coefficients[n],
           r.stable.std_errors[n], r.unstable.coefficients[n], r.unstable.std_errors[n],
           r.reconstructed.coefficients[n], r.reconstructed.std_errors[n], r.difference.coefficients[n],
           r.difference.std_errors[n]});
  out.add("split.csv", t.str());

  const TangentCocycle cocycle(ctx.family, ctx.alpha, m.orbits.front());
  const std::size_t steps = std::min<std::size_t>(cocycle.steps(), ctx.cfg.lyapunov.steps);
  const LyapunovSpectrum spec = benettin_spectrum(cocycle, steps, 1, std::nullopt, ctx.cfg.batches);
  out.steps["tangent_steps"] += steps;
  const DecayFit stable_fit = fit_exponential_decay(r.stable.coefficients, r.stable.std_errors, 0, N);
  const double rate_sigma =
      std::abs(r.stable_rate.value - spec.exponents.back()) /
      std::hypot(r.stable_rate.std_error, spec.std_errors.back());
  out.add_json("split.json", {{"system", ctx.family.name},
                              {"alpha", ctx.alpha},
                              {"samples", r.samples},
                              {"excluded", r.excluded},
                              {"excluded_mass", r.excluded_mass},
                              {"stable_decay", fit_json(stable_fit)},
                              {"stable_rate", estimate_json(r.stable_rate)},
                              {"lambda_s", spec.exponents.back()},
                              {"lambda_s_error", spec.std_errors.back()},
                              {"stable_rate_sigma", rate_sigma},
                              {"radius", N >= 8 ? radius_json(radius_estimate(r.reconstructed, ctx.radius_options()))
                                                : Json(nullptr)},
                              {"psi1_direct", estimate_json({psi_eval(r.direct, 1.0).value.real(),
                                                             psi_eval(r.direct, 1.0).std_error})},
                              {"psi1_reconstructed", estimate_json({psi_eval(r.reconstructed, 1.0).value.real(),
                                                                    psi_eval(r.reconstructed, 1.0).std_error})}});
}

inline void run_tangency(const Context& ctx, RunOutput& out) {
  const auto& c = ctx.cfg.tangency;
  const Trajectory orbit = ctx.single_orbit(out, c.steps + 2 * c.warmup + 1, 4);
  const TangentCocycle cocycle(ctx.family, ctx.alpha, orbit);
  const OseledetsSplitting split = compute_clvs(cocycle, c.steps, c.warmup);
  out.steps["tangent_steps"] += c.steps + 2 * c.warmup;
  const AngleSeries angles = splitting_angles(split);
  const DimensionEstimate dims = dimension_estimates(split.spectrum);
  const auto folds = detect_folds(cocycle, split, c.angle_threshold, c.cluster_radius);

  io::CsvTable ft({"index", "angle", "members", "x0", "x1"});
  for (const auto& f : folds)
    ft.row({static_cast<long long>(f.index), f.angle, static_cast<long long>(f.members), f.point(0), f.point(1)});
  out.add("folds.csv", ft.str());

  Json j = {{"system", ctx.family.name},
            {"alpha", ctx.alpha},
            {"points", split.size()},
            {"min_angle", angles.min()},
            {"angle_threshold", c.angle_threshold},
            {"folds", folds.size()},
            {"dimensions", dimension_json(dims)},
            {"fold_threshold_regime", dims.stable_dim > 0.5 ? "above" : "below"}};
  if (!folds.empty()) {
    FoldScanOptions so;
    so.radius = c.radius;
    so.half_width = c.half_width;
    so.refine = c.refine;
    so.max_leaves = c.max_leaves;
    so.min_angle = c.min_angle;
    const FoldScan scan = scan_fold_parameters(cocycle, split, folds.front(), so);
    out.steps["map_steps"] += scan.leaves * c.refine;
    const CountingFunction cf = counting_function(scan.thetas);
    io::CsvTable pt({"theta", "psi"});
    for (std::size_t i = 0; i < cf.thetas.size(); ++i) pt.row({cf.thetas[i], cf.cumulative[i]});
    out.add("fold_parameters.csv", pt.str());
    const double bound = std::min(1.0, dims.stable_dim) + 0.05;
    j["fold_scan"] = {{"leaves", scan.leaves},
                      {"leaves_with_fold", scan.leaves_with_fold},
                      {"escaped", scan.escaped},
                      {"counting", counting_json(cf)},
                      {"projection_bound", bound},
                      {"projection_consistent", cf.ci_lo <= bound}};

    TransversalFrame frame = scan.frame;
    frame.radius = c.projection_radius;
    const ProjectedSamples proj = project_along_stable(frame, cocycle, split, ctx.cfg.workers);
    j["projection"] = {{"projected", proj.size()},
                       {"source_weight", proj.source_weight},
                       {"excluded", proj.excluded},
                       {"excluded_weight", proj.excluded_weight},
                       {"outside", proj.outside}};
    if (proj.size() >= 1000) {
      DensityOptions dopt;
      dopt.batches = ctx.cfg.batches;
      const DensityProfile prof = density_profile(proj, c.bandwidth, dopt);
      io::CsvTable dt({"theta", "delta", "stderr"});
      const double total = proj.source_weight;
      for (std::size_t k = 0; k < prof.size(); ++k)
        dt.row({prof.theta[k], prof.values[k] / total, prof.std_errors[k] / total});
      out.add("density_profile.csv", dt.str());
      j["projection"]["profile_mass"] = prof.integral() / proj.source_weight;
    } else {
      j["projection"]["note"] = "fewer than 1000 projected samples; no density profile";
    }
  }
  out.add_json("tangency.json", j);
}

inline void run_fold_synthetic(const Context& ctx, RunOutput& out) {
  const auto& y = ctx.cfg.synthetic;
  Json rows = Json::array();
  for (std::size_t i = 0; i < y.sigmas.size(); ++i) {
    const SigmaSpec sigma = make_sigma(y.sigmas[i]);
    ConvolutionOptions opt;
    opt.grid = y.grid;
    opt.two_sided = y.two_sided;
    opt.cell_average = y.cell_average;
    opt.workers = ctx.cfg.workers;
    const DensityProfile p = synthetic_fold_convolution(sigma, y.T, opt);
    out.steps["kernel_evaluations"] += p.size() * sigma.pieces.size();
    io::CsvTable t({"theta", "delta"});
    for (std::size_t k = 0; k < p.size(); ++k) t.row({p.theta[k], p.values[k]});
    const std::string name = "fold_synthetic_" + std::to_string(i) + ".csv";
    out.add(name, t.str());

    Json row = {{"file", name},
                {"sigma", detail::write_sigma(y.sigmas[i])},
                {"label", sigma.label},
                {"dimension", sigma.dimension},
                {"predicted_exponent", sigma.dimension > 0.5 ? num(sigma.dimension - 0.5) : Json(nullptr)}};
    bool finite = true;
    for (double v : p.values) finite = finite && std::isfinite(v);
    if (finite) {
      HolderOptions ho;
      ho.min_scale = y.holder_min_scale;
      ho.max_scale = y.holder_max_scale;
      row["holder"] = holder_json(holder_exponent(p, ho));
      row["max_delta"] = *std::max_element(p.values.begin(), p.values.end());
    } else {
      row["holder"] = nullptr;
      row["note"] = "profile is infinite at some grid points (atom on the grid)";
    }
    if (!y.refinements.empty()) {
      Json growth = Json::array();
      double prev = 0.0;
      for (double g : y.refinements) {
        ConvolutionOptions r = opt;
        r.grid = static_cast<std::size_t>(g);
        r.cell_average = true;
        const DensityProfile q = synthetic_fold_convolution(sigma, y.T, r);
        out.steps["kernel_evaluations"] += q.size() * sigma.pieces.size();
        const double m = *std::max_element(q.values.begin(), q.values.end());
        growth.push_back({{"grid", r.grid}, {"max_cell_average", m}, {"ratio", prev > 0 ? num(m / prev) : Json(nullptr)}});
        prev = m;
      }
      row["refinement"] = growth;
    }
    rows.push_back(row);
  }
  out.add_json("fold_synthetic.json", {{"T", y.T}, {"grid", y.grid}, {"two_sided", y.two_sided}, {"sigmas", rows}});
}

inline void run_conjecture_report(const Context& ctx, RunOutput& out) {
  io::CsvTable t({"system", "alpha", "d_s", "mixing_rate", "radius", "radius_ci_lo", "radius_ci_hi", "psi1",
                  "psi1_stderr", "psi1_status"});
  Json rows = Json::array();
  std::uint64_t tag = 100;
  for (std::size_t i = 0; i < ctx.cfg.conjecture.systems.size(); ++i) {
    ExperimentConfig sub = ctx.cfg;
    sub.system = ctx.cfg.conjecture.systems[i];
    sub.observable = ctx.cfg.conjecture.observables[i];
    sub.perturbation = "family";
    const Context c(sub);
    const EmpiricalMeasure m = c.measure(out, sub.sampling.length, sub.sampling.ensemble, tag++);

    const TangentCocycle cocycle(c.family, c.alpha, m.orbits.front());
    const std::size_t steps = std::min<std::size_t>(cocycle.steps(), sub.lyapunov.steps);
    const LyapunovSpectrum spec = benettin_spectrum(cocycle, steps, 1, std::nullopt, sub.batches);
    out.steps["tangent_steps"] += steps;
    Json row = {{"system", c.family.name}, {"alpha", c.alpha}, {"observable", c.phi.name}};
    double ds = std::numeric_limits<double>::quiet_NaN();
    try {
      const DimensionEstimate d = dimension_estimates(spec);
      ds = d.stable_dim;
      row["dimensions"] = dimension_json(d);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::hyperbolicity) throw;
      row["dimensions"] = {{"error", e.what()}};
    }
    row["d_s"] = num(ds);

    const CorrelationSeries corr = correlation(m, c.phi, c.phi, sub.correlate.lags, 1, 0, sub.batches);
    const double mixing = corr.fit.defined ? corr.fit.rate : std::numeric_limits<double>::quiet_NaN();
    row["mixing"] = fit_json(corr.fit);

    SusceptibilitySeries s;
    std::string route = "split";
    try {
      const SplitResult sr = stable_unstable_split(m, c.field, c.phi, sub.split.N, c.split_options());
      out.steps["tangent_steps"] += sr.samples * (sub.split.N + 1);
      s = sr.reconstructed;
      row["excluded_mass"] = sr.excluded_mass;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::unsupported) throw;
      route = sub.susceptibility.route;
      s = c.series(out, m, sub.susceptibility.N);
    }
    row["route"] = route;
    RadiusEstimate r;
    if (s.order() >= 8) {
      r = radius_estimate(s, c.radius_options());
    } else {
      r.indeterminate = true;
      r.notes.push_back("series shorter than 8 terms");
    }
    const PsiValue p = psi_eval(s, 1.0);
    std::string status = "indeterminate";
    if (r.infinite || (std::isfinite(r.ci_lo) && r.ci_lo > 1.0))
      status = "convergent";
    else if (std::isfinite(r.ci_hi) && r.ci_hi < 1.0)
      status = "divergent";
    row["radius"] = radius_json(r);
    row["psi1"] = {{"value", num(p.value.real())}, {"std_error", num(p.std_error)}, {"status", status}};
    rows.push_back(row);
    t.row({c.family.name, c.alpha, ds, mixing, r.infinite ? std::numeric_limits<double>::infinity() : r.value,
           r.ci_lo, r.ci_hi, p.value.real(), p.std_error, status});
  }
  out.add("conjecture_report.csv", t.str());
  out.add_json("conjecture_report.json",
               {{"columns", {"system", "d_s", "mixing_rate", "radius", "psi1_status"}}, {"rows", rows}});
}

}  // namespace detail

using Runner = std::function<void(const detail::Context&, RunOutput&)>;

inline const std::map<std::string, Runner>& subcommands() {
  static const std::map<std::string, Runner> table = {
      {"lyapunov", detail::run_lyapunov},
      {"clv", detail::run_clv},
      {"srb", detail::run_srb},
      {"correlate", detail::run_correlate},
      {"susceptibility", detail::run_susceptibility},
      {"radius", detail::run_radius},
      {"response-check", detail::run_response_check},
      {"split", detail::run_split},
      {"tangency", detail::run_tangency},
      {"fold-synthetic", detail::run_fold_synthetic},
      {"conjecture-report", detail::run_conjecture_report},
  };
  return table;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

/// Output directory: the environment override if set, else the config value.
inline std::filesystem::path output_directory(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_directory;
}

struct RunResult {
  int status = 0;
  std::filesystem::path directory;
  std::vector<std::string> files;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_error(const std::filesystem::path& dir, const std::string& subcommand, const Error& e) {
  Json j = {{"subcommand", subcommand},
            {"kind", to_string(e.kind())},
            {"message", e.what()},
            {"step", e.step() ? Json(*e.step()) : Json(nullptr)},
            {"exit_code", exit_code(e.kind())}};
  io::write_file(dir / "error.json", j.dump(2) + "\n");
}

/// Runs one subcommand: outputs and resolved_config.json first, then
/// manifest.json with their digests. On failure writes error.json instead of
/// the manifest and returns the matching exit status.
inline RunResult run_experiment(const std::string& subcommand, const ExperimentConfig& cfg) {
  RunResult res;
  res.directory = output_directory(cfg);
  const auto it = subcommands().find(subcommand);
  if (it == subcommands().end()) fail(ErrorKind::config, "unknown subcommand '" + subcommand + "'");
  std::filesystem::create_directories(res.directory);
  std::filesystem::remove(res.directory / "manifest.json");
  std::filesystem::remove(res.directory / "error.json");

  const auto start = std::chrono::steady_clock::now();
  RunOutput out;
  try {
    const detail::Context ctx(cfg);
    it->second(ctx, out);
  } catch (const Error& e) {
    write_error(res.directory, subcommand, e);
    res.status = exit_code(e.kind());
    return res;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  out.add_json("resolved_config.json", cfg.to_json());
  Json files = Json::array();
  for (const auto& [name, body] : out.files) {
    io::write_file(res.directory / name, body);
    files.push_back({{"name", name}, {"bytes", body.size()}, {"sha256", io::sha256_hex(body)}});
    res.files.push_back(name);
  }
  Json steps = Json::object();
  for (const auto& [k, v] : out.steps) steps[k] = v;
  const Json manifest = {{"artifact", "linresp"},
                         {"version", kArtifactVersion},
                         {"subcommand", subcommand},
                         {"config", cfg.to_json()},
                         {"files", files},
                         {"steps", steps},
                         {"wall_clock_seconds", seconds},
                         {"completed_at", utc_timestamp()}};
  io::write_file(res.directory / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

}  // namespace linresp
