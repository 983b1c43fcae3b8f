// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "linresp/experiment.hpp"

using namespace linresp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Mat cat_matrix() {
  Mat c(2, 2);
  c << 2, 1, 1, 1;
  return c;
}

Trajectory warm_orbit(const MapFamily& f, double alpha, std::size_t points, std::uint64_t seed) {
  return srb_sample(f, alpha, InitialSampler::for_family(f, seed), 2000, points, 1).orbits.front();
}

// 1 --------------------------------------------------------------------------
Verdict cat_lyapunov() {
  Verdict v;
  Eigen::SelfAdjointEigenSolver<Mat> eig(cat_matrix());
  const double oracle = std::log(eig.eigenvalues().cwiseAbs().maxCoeff());
  const auto start = std::chrono::steady_clock::now();
  const auto cat = cat_family();
  const std::size_t steps = 1000000;
  const Trajectory orbit = iterate(cat, 0.0, make_vec({0.1234, 0.5678}), steps);
  const auto s = benettin_spectrum(TangentCocycle(cat, 0.0, orbit), steps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.check(std::abs(s.exponents[0] - oracle) < 1e-3, fmt("lambda1 %.9f vs eigenvalue oracle %.9f", s.exponents[0], oracle));
  v.check(secs < 10.0, fmt("1e6 steps in %.2f s", secs));
  return v;
}

// 2 --------------------------------------------------------------------------
Verdict sum_rule() {
  Verdict v;
  for (const std::string name : {"cat", "henon"}) {
    const auto f = make_family(name);
    const Trajectory orbit = warm_orbit(f, f.default_alpha, 200001, 2);
    const auto s = benettin_spectrum(TangentCocycle(f, f.default_alpha, orbit), 200000);
    const double r = s.sum() - s.mean_log_det;
    v.check(std::abs(r) < 1e-8, name + fmt(" residual %.2e", r));
  }
  return v;
}

// 3 --------------------------------------------------------------------------
// Ridders' extrapolation of central differences; returns the tableau entry
// with the smallest error estimate.
double ridders(const std::function<double(double)>& central, double h) {
  constexpr int kSize = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink;
  double t[kSize][kSize];
  t[0][0] = central(h);
  double best = t[0][0], err = std::numeric_limits<double>::infinity();
  for (int i = 1; i < kSize; ++i) {
    h /= kShrink;
    t[0][i] = central(h);
    double fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      t[j][i] = (t[j - 1][i] * fac - t[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(t[j][i] - t[j - 1][i]), std::abs(t[j][i] - t[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = t[j][i];
      }
    }
    if (std::abs(t[i][i] - t[i - 1][i - 1]) >= 2.0 * err) break;
  }
  return best;
}

Verdict chain_rule() {
  Verdict v;
  for (const auto& f : builtin_catalog()) {
    const double a = f.default_alpha;
    const Trajectory pool = warm_orbit(f, a, 20000, 3);
    Rng rng(derive_seed(3, 77));
    const Observable phi = sine_observable(Vec::Ones(f.dimension));
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
      const Vec x = pool[static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size() - 1))];
      for (std::size_t n = 1; n <= 10; ++n) {
        const Trajectory o = iterate(f, a, x, n);
        const Mat dfn = TangentCocycle(f, a, o).product(0, n);
        const Vec g = dfn.transpose() * phi.gradient(o[n]);
        const double h = 1e-3 / std::max(1.0, dfn.norm());
        const auto value = [&](const Vec& y) { return phi.eval(iterate(f, a, y, n)[n]); };
        Vec fd(f.dimension);
        for (int k = 0; k < f.dimension; ++k) {
          fd(k) = ridders([&](double s) {
            Vec xp = x, xm = x;
            xp(k) += s;
            xm(k) -= s;
            return (value(xp) - value(xm)) / (2 * s);
          }, h);
        }
        worst = std::max(worst, (g - fd).norm() / g.norm());
      }
    }
    v.check(worst < 1e-5, f.name + fmt(" %.1e", worst));
  }
  return v;
}

// 4 --------------------------------------------------------------------------
Verdict clv_covariance_check() {
  Verdict v;
  for (const std::string name : {"cat", "cat_translate"}) {
    const auto f = make_family(name);
    const Trajectory orbit = warm_orbit(f, f.default_alpha, 4001, 4);
    const TangentCocycle c(f, f.default_alpha, orbit);
    const auto split = compute_clvs(c, 2000, 1000);
    const auto d = clv_covariance(c, split);
    const double r = std::max(d.max_unstable_residual, d.max_stable_residual);
    v.check(r < 1e-6, name + fmt(" residual %.1e", r));
    if (name != "cat") continue;
    Eigen::SelfAdjointEigenSolver<Mat> eig(cat_matrix());
    const Vec es = eig.eigenvectors().col(0), eu = eig.eigenvectors().col(1);
    double dev = 0.0;
    for (const auto& m : split.clvs) {
      dev = std::max(dev, std::min((m.col(0) - eu).norm(), (m.col(0) + eu).norm()));
      dev = std::max(dev, std::min((m.col(1) - es).norm(), (m.col(1) + es).norm()));
    }
    v.check(dev < 1e-10, fmt("cat CLVs vs eigenvectors %.1e", dev));
  }
  const auto h = henon_family();
  const Trajectory orbit = warm_orbit(h, h.default_alpha, 22001, 4);
  const TangentCocycle c(h, h.default_alpha, orbit);
  const auto split = compute_clvs(c, 20000, 1000);
  const auto d = clv_covariance(c, split);
  const double r = std::max(d.max_unstable_residual, d.max_stable_residual);
  v.check(r < 1e-3, fmt("henon interior residual %.1e over %.0f points", r, static_cast<double>(split.size())));
  return v;
}

// 5 --------------------------------------------------------------------------
Verdict volume_identity() {
  Verdict v;
  const auto cat = cat_family();
  const auto m = srb_sample(cat, 0.0, InitialSampler::for_family(cat, 5), 2000, 50000, 8);
  const auto phi = parse_observable("cos:1,1", cat.chart);
  for (const auto& X : {sine_field(2, 0, 0), sine_field(2, 1, 1)}) {
    const auto r = volume_preserving_identity(m, X, phi, 10);
    double worst = 0.0;
    for (const auto& row : r.rows) worst = std::max(worst, row.sigma);
    v.check(r.pass, X.name + fmt(" max %.2f sigma over n <= 10", worst));
  }
  return v;
}

// 6 and 10 share the nonlinear cat sample ---------------------------------------
struct NonlinearCat {
  MapFamily f = cat_nonlinear_family();
  double alpha = 0.3;
  Observable phi = parse_observable("cos:1,-1", Chart::torus(2));
  EmpiricalMeasure m;
  SplitResult split;

  NonlinearCat() {
    m = srb_sample(f, alpha, InitialSampler::for_family(f, 6), 2000, 50000, 8);
    split = stable_unstable_split(m, family_perturbation(f, alpha), phi, 10);
  }
};

const NonlinearCat& nonlinear_cat() {
  static const NonlinearCat s;
  return s;
}

Verdict axiom_a_response() {
  Verdict v;
  const auto& s = nonlinear_cat();
  const PsiValue psi = psi_eval(s.split.reconstructed, 1.0);
  FiniteDifferenceOptions fd;
  fd.transient = 2000;
  fd.length = 100000;
  fd.ensemble = 8;
  fd.seed = 66;
  const auto d = finite_difference_response(s.f, s.alpha, 0.05, s.phi, fd);
  const auto cmp = compare_response({psi.value.real(), psi.std_error}, d.derivative);
  v.check(cmp.agree, fmt("Psi(1) %.4f +- %.4f vs FD %.4f +- %.4f", cmp.psi.value, cmp.psi.std_error,
                         d.derivative.value, d.derivative.std_error) +
                         fmt(" (%.2f sigma)", cmp.sigma));
  const auto r = radius_estimate(s.split.reconstructed);
  v.check(r.value > 1.0 && r.ci_lo > 1.0, fmt("radius %.2f, CI [%.2f, %.2f]", r.value, r.ci_lo, r.ci_hi) +
                                              fmt(", %.0f%% of coefficients above noise", 100 * r.usable_fraction));
  return v;
}

Verdict split_reconstruction() {
  Verdict v;
  const auto& s = nonlinear_cat();
  double worst = 0.0;
  for (std::size_t n = 0; n <= 10; ++n)
    worst = std::max(worst, std::abs(s.split.difference.coefficients[n]) / s.split.difference.std_errors[n]);
  v.check(worst <= 3.0, fmt("max |direct - (stable + unstable)| %.2f sigma over n <= 10", worst));
  const Trajectory& o = s.m.orbits.front();
  const auto spec = benettin_spectrum(TangentCocycle(s.f, s.alpha, o), o.size() - 1);
  const double ls = spec.exponents[1], le = spec.std_errors[1];
  const Estimate rate = s.split.stable_rate;
  const double sig = std::abs(rate.value - ls) / std::hypot(rate.std_error, le);
  v.check(sig <= 3.0, fmt("stable-term rate %.5f +- %.5f vs lambda_s %.5f +- %.5f", rate.value, rate.std_error, ls, le) +
                          fmt(" (%.2f sigma)", sig));
  return v;
}

// 7 --------------------------------------------------------------------------
Verdict radius_calibration() {
  Verdict v;
  for (double r : {0.5, 1.2, 3.0}) {
    std::vector<double> c;
    for (int n = 0; n <= 20; ++n) c.push_back(0.8 * std::pow(r, -n));
    const auto s = SusceptibilitySeries::synthetic(c);
    RadiusOptions root, pade;
    pade.method = RadiusOptions::pade_pole;
    const auto a = radius_estimate(s, root), b = radius_estimate(s, pade);
    v.check(std::abs(a.value / r - 1) < 0.02, fmt("r=%.1f root %.6f", r, a.value));
    v.check(std::abs(b.value / r - 1) < 0.02, fmt("pade %.6f", b.value));
  }
  return v;
}

// 8 --------------------------------------------------------------------------
Verdict tangency_regime() {
  Verdict v;
  const auto h = henon_family();
  const Trajectory orbit = warm_orbit(h, 1.4, 102001, 8);
  const TangentCocycle c(h, 1.4, orbit);
  const auto split = compute_clvs(c, 100000, 1000);
  const double angle = splitting_angles(split).min();
  v.check(angle < 0.01, fmt("henon min angle %.2e over %.0f points", angle, static_cast<double>(split.size())));
  const auto dh = dimension_estimates(split.spectrum);
  v.check(std::abs(dh.stable_dim - 0.26) <= 0.05, fmt("henon d_s %.4f", dh.stable_dim));
  v.check(dh.stable_dim + dh.uncertainty < 0.5, "below 1/2");

  const auto cat = cat_family();
  const Trajectory co = iterate(cat, 0.0, make_vec({0.3, 0.1}), 100000);
  const auto dc = dimension_estimates(benettin_spectrum(TangentCocycle(cat, 0.0, co), 100000));
  v.check(std::abs(dc.stable_dim - 1.0) <= 0.02, fmt("cat d_s %.6f", dc.stable_dim));
  v.check(dc.stable_dim - dc.uncertainty > 0.5, "above 1/2");
  return v;
}

// 9 --------------------------------------------------------------------------
Verdict synthetic_fold() {
  Verdict v;
  ConvolutionOptions opt;
  opt.grid = 1 << 14;
  const auto u = synthetic_fold_convolution(SigmaSpec::uniform(0, 1), 1.0, opt);
  double err = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) err = std::max(err, std::abs(u.values[k] - 2 * std::sqrt(u.theta[k])));
  v.check(err < 1e-3, fmt("uniform max grid error %.1e", err));

  opt.grid = 1 << 16;
  const double hu = holder_exponent(synthetic_fold_convolution(SigmaSpec::uniform(0, 1), 1.0, opt)).exponent;
  v.check(std::abs(hu - 0.5) <= 0.05, fmt("uniform Holder %.4f vs 0.5", hu));
  const double predicted = std::log(2.0) / std::log(3.0) - 0.5;
  const double hc = holder_exponent(synthetic_fold_convolution(SigmaSpec::cantor(1.0 / 3, 12), 1.0, opt)).exponent;
  v.check(std::abs(hc - predicted) <= 0.05, fmt("Cantor Holder %.4f vs %.4f", hc, predicted));

  // d = 1/4: one self-similar level is a factor 16 in resolution and should
  // double the peak cell average.
  const SigmaSpec sub = SigmaSpec::cantor(1.0 / 16, 6);
  opt.cell_average = true;
  double prev = 0.0;
  std::string ratios;
  bool ok = true;
  for (std::size_t g : {std::size_t{1} << 10, std::size_t{1} << 14, std::size_t{1} << 18, std::size_t{1} << 22}) {
    opt.grid = g;
    const auto p = synthetic_fold_convolution(sub, 1.0, opt);
    const double peak = *std::max_element(p.values.begin(), p.values.end());
    if (prev > 0) {
      const double ratio = peak / prev;
      ok = ok && std::abs(ratio / 2 - 1) <= 0.2;
      ratios += fmt(" %.3f", ratio);
    }
    prev = peak;
  }
  v.check(ok, "sub-threshold peak growth per x16 refinement" + ratios);
  return v;
}

// 11 -------------------------------------------------------------------------
Verdict determinism() {
  Verdict v;
  const Json base = {{"sampling", {{"transient", 1000}, {"length", 4000}, {"ensemble", 2}}},
                     {"lyapunov", {{"steps", 4000}}},
                     {"clv", {{"steps", 2000}, {"warmup", 200}}},
                     {"susceptibility", {{"N", 8}}},
                     {"split", {{"N", 8}}},
                     {"response", {{"length", 4000}, {"ensemble", 2}}},
                     {"tangency", {{"steps", 20000}, {"warmup", 500}, {"max_leaves", 400}}},
                     {"synthetic", {{"grid", 4096}, {"refinements", {1024, 4096}}}},
                     {"conjecture", {{"systems", {{{"name", "cat_nonlinear"}}, {{"name", "henon"}}}}}}};
  const fs::path dir = fs::temp_directory_path() / "linresp_acceptance_determinism";
  std::size_t files = 0;
  for (const auto& [name, runner] : subcommands()) {
    Json j = base;
    if (name == "tangency") j["system"] = {{"name", "henon"}};
    j["output"] = {{"directory", dir.string()}};
    const auto cfg = ExperimentConfig::from_json(j);
    std::vector<std::pair<std::string, std::string>> first;
    bool same = true;
    for (int rep = 0; rep < 2; ++rep) {
      fs::remove_all(dir);
      const auto r = run_experiment(name, cfg);
      same = same && r.status == 0;
      for (std::size_t i = 0; i < r.files.size(); ++i) {
        const std::string body = io::read_file(dir / r.files[i]);
        if (rep == 0) first.emplace_back(r.files[i], body);
        else same = same && i < first.size() && first[i].first == r.files[i] && first[i].second == body;
      }
      if (rep == 1) same = same && first.size() == r.files.size();
    }
    files += first.size();
    if (!same) v.check(false, name + " differs between runs");
  }
  fs::remove_all(dir);
  v.check(v.pass, fmt("%.0f files across %.0f subcommands byte-identical", static_cast<double>(files),
                      static_cast<double>(subcommands().size())));
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"cat-lyapunov", cat_lyapunov},
      {"determinant-sum-rule", sum_rule},
      {"chain-rule", chain_rule},
      {"clv-covariance", clv_covariance_check},
      {"volume-preserving-identity", volume_identity},
      {"axiom-a-linear-response", axiom_a_response},
      {"radius-calibration", radius_calibration},
      {"tangency-regime", tangency_regime},
      {"synthetic-fold", synthetic_fold},
      {"split-reconstruction", split_reconstruction},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += v.pass ? 0 : 1;
    std::printf("%s %2zu %-27s %6.1fs  %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
