#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "linresp/error.hpp"
#include "linresp/linalg.hpp"
#include "linresp/maps.hpp"
#include "linresp/measure.hpp"
#include "linresp/parallel.hpp"
#include "linresp/random.hpp"
#include "linresp/stats.hpp"
#include "linresp/tangent.hpp"

namespace linresp {

using Complex = std::complex<double>;

inline constexpr double kTangentOverflow = 1e300;

// ---------------------------------------------------------------------------
// Susceptibility series
// ---------------------------------------------------------------------------

struct SusceptibilitySeries {
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  /// Per-batch coefficient means [batch][n]; empty for synthetic series.
  std::vector<std::vector<double>> batch_values;
  std::string system;
  std::string observable;
  std::string field;
  std::string route = "direct";
  std::size_t samples = 0;
  std::vector<std::string> warnings;

  std::size_t order() const { return coefficients.empty() ? 0 : coefficients.size() - 1; }
  std::size_t size() const { return coefficients.size(); }

  static SusceptibilitySeries synthetic(std::vector<double> c, std::vector<double> se = {}) {
    SusceptibilitySeries s;
    if (se.empty()) se.assign(c.size(), 0.0);
    require(se.size() == c.size(), "synthetic series: error vector size mismatch");
    s.coefficients = std::move(c);
    s.std_errors = std::move(se);
    s.route = "synthetic";
    return s;
  }

  /// Keeps coefficients 0..n.
  void truncate(std::size_t n) {
    if (n + 1 >= coefficients.size()) return;
    coefficients.resize(n + 1);
    std_errors.resize(n + 1);
    for (auto& b : batch_values) b.resize(n + 1);
  }
};

namespace detail {

/// Contiguous run of sample start indices j in [begin, end) on one orbit;
/// global sample index = first + (j - begin).
struct SampleRange {
  const Trajectory* orbit = nullptr;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t first = 0;
};

inline std::vector<SampleRange> sample_ranges(const EmpiricalMeasure& m, std::size_t start,
                                              std::size_t lookahead, std::size_t& total,
                                              std::size_t chunk = 1u << 14) {
  std::vector<SampleRange> out;
  total = 0;
  for (const auto& o : m.orbits) {
    if (o.size() <= start + lookahead) continue;
    const std::size_t stop = o.size() - lookahead;
    for (std::size_t b = start; b < stop; b += chunk) {
      const std::size_t e = std::min(stop, b + chunk);
      out.push_back({&o, b, e, total});
      total += e - b;
    }
  }
  return out;
}

/// Runs body(unit, range, accumulator) over all ranges with fresh
/// accumulators and merges them in range order.
template <class Body>
BatchAccumulator run_samples(const std::vector<SampleRange>& ranges, std::size_t total, std::size_t channels,
                             int batches, int workers, Body&& body) {
  std::vector<BatchAccumulator> parts(ranges.size(),
                                      BatchAccumulator(channels, total, static_cast<std::size_t>(batches)));
  parallel_for(ranges.size(), workers, [&](std::size_t u) { body(u, ranges[u], parts[u]); });
  BatchAccumulator acc(channels, total, static_cast<std::size_t>(batches));
  for (const auto& p : parts) acc.merge(p);
  return acc;
}

/// Jacobians, gradients and values on orbit indices [lo, hi).
struct OrbitWindow {
  std::size_t lo = 0;
  std::vector<Mat> jac;
  std::vector<Vec> grad;
  std::vector<double> value;

  OrbitWindow(const MapFamily& f, double alpha, const Observable& phi, const Trajectory& o, std::size_t lo_,
              std::size_t hi, bool with_values = false)
      : lo(lo_) {
    jac.reserve(hi - lo);
    grad.reserve(hi - lo);
    for (std::size_t j = lo; j < hi; ++j) {
      const Vec x = o[j];
      jac.push_back(f.jacobian(alpha, x));
      grad.push_back(phi.gradient(x));
      if (with_values) value.push_back(phi.eval(x));
    }
  }
  const Mat& J(std::size_t j) const { return jac[j - lo]; }
  const Vec& G(std::size_t j) const { return grad[j - lo]; }
  double V(std::size_t j) const { return value[j - lo]; }
};

inline SusceptibilitySeries series_from(const BatchAccumulator& acc, std::size_t offset, std::size_t count) {
  SusceptibilitySeries s;
  const auto est = acc.estimates();
  const auto bv = acc.batch_values();
  for (std::size_t n = 0; n < count; ++n) {
    s.coefficients.push_back(est[offset + n].value);
    s.std_errors.push_back(est[offset + n].std_error);
  }
  for (const auto& row : bv)
    s.batch_values.emplace_back(row.begin() + static_cast<std::ptrdiff_t>(offset),
                                row.begin() + static_cast<std::ptrdiff_t>(offset + count));
  s.samples = acc.total();
  return s;
}

inline void apply_overflow(SusceptibilitySeries& s, const std::vector<std::size_t>& limits, std::size_t N) {
  std::size_t lim = N;
  for (auto l : limits) lim = std::min(lim, l);
  if (lim < N) {
    s.warnings.push_back("tangent norm exceeded 1e300; series truncated at n = " + std::to_string(lim));
    s.truncate(lim);
  }
}

inline void label(SusceptibilitySeries& s, const EmpiricalMeasure& m, const PerturbationField& X,
                  const Observable& phi, const std::string& route) {
  s.system = m.family.name;
  s.field = X.name;
  s.observable = phi.name;
  s.route = route;
}

}  // namespace detail

struct SusceptibilityOptions {
  int batches = kDefaultBatches;
  int workers = 1;
};

/// kappa_n = rho(X . (T_x f^n)^T grad phi(f^n x)), n = 0..N, by forward
/// transport of X along the cocycle. Sample starts are orbit points j >= 1 so
/// X can be evaluated from the predecessor.
inline SusceptibilitySeries susceptibility_coefficients(const EmpiricalMeasure& m, const PerturbationField& X,
                                                        const Observable& phi, std::size_t N,
                                                        const SusceptibilityOptions& opt = {}) {
  require(N >= 1, "susceptibility_coefficients: N must be at least 1");
  std::size_t total = 0;
  const auto ranges = detail::sample_ranges(m, 1, N, total);
  if (total == 0) fail(ErrorKind::insufficient_data, "susceptibility_coefficients: orbits shorter than N + 2");
  std::vector<std::size_t> limits(ranges.size(), N);
  const auto acc = detail::run_samples(ranges, total, N + 1, opt.batches, opt.workers,
                                       [&](std::size_t u, const detail::SampleRange& r, BatchAccumulator& a) {
    const Trajectory& o = *r.orbit;
    const detail::OrbitWindow w(m.family, m.alpha, phi, o, r.begin, r.end + N);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      Vec v = X.at(o[j - 1], o[j]);
      double* row = a.row_for(r.first + (j - r.begin));
      for (std::size_t n = 0; n <= N; ++n) {
        if (n > limits[u]) break;
        row[n] += w.G(j + n).dot(v);
        if (n == N) break;
        v = w.J(j + n) * v;
        if (!(v.norm() <= kTangentOverflow)) limits[u] = std::min(limits[u], n);
      }
    }
  });
  auto s = detail::series_from(acc, 0, N + 1);
  detail::label(s, m, X, phi, "direct");
  detail::apply_overflow(s, limits, N);
  return s;
}

/// Same coefficients by back-propagating grad phi with transposed Jacobians.
inline SusceptibilitySeries susceptibility_adjoint(const EmpiricalMeasure& m, const PerturbationField& X,
                                                   const Observable& phi, std::size_t N,
                                                   const SusceptibilityOptions& opt = {}) {
  require(N >= 1, "susceptibility_adjoint: N must be at least 1");
  std::size_t total = 0;
  const auto ranges = detail::sample_ranges(m, 1, N, total);
  if (total == 0) fail(ErrorKind::insufficient_data, "susceptibility_adjoint: orbits shorter than N + 2");
  const auto acc = detail::run_samples(ranges, total, N + 1, opt.batches, opt.workers,
                                       [&](std::size_t, const detail::SampleRange& r, BatchAccumulator& a) {
    const Trajectory& o = *r.orbit;
    const detail::OrbitWindow w(m.family, m.alpha, phi, o, r.begin, r.end + N);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      const Vec x = X.at(o[j - 1], o[j]);
      double* row = a.row_for(r.first + (j - r.begin));
      for (std::size_t n = 0; n <= N; ++n) {
        Vec g = w.G(j + n);
        for (std::size_t k = n; k-- > 0;) g = w.J(j + k).transpose() * g;
        row[n] += x.dot(g);
      }
    }
  });
  auto s = detail::series_from(acc, 0, N + 1);
  detail::label(s, m, X, phi, "adjoint");
  return s;
}

// ---------------------------------------------------------------------------
// Polynomials and Pade approximants
// ---------------------------------------------------------------------------

/// Roots of sum_k p[k] z^k via companion-matrix eigenvalues. Leading
/// coefficients below 1e-14 of the largest are dropped.
inline std::vector<Complex> polynomial_roots(std::vector<double> p) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  while (!p.empty() && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  if (p.size() <= 1) return {};
  const std::size_t deg = p.size() - 1;
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(deg), static_cast<Eigen::Index>(deg));
  for (std::size_t i = 1; i < deg; ++i) comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = 1.0;
  for (std::size_t i = 0; i < deg; ++i)
    comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(deg - 1)) = -p[i] / p[deg];
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  std::vector<Complex> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  std::sort(out.begin(), out.end(), [](Complex a, Complex b) { return std::abs(a) < std::abs(b); });
  return out;
}

inline Complex polyval(const std::vector<double>& p, Complex z) {
  Complex acc = 0.0;
  for (std::size_t k = p.size(); k-- > 0;) acc = acc * z + p[k];
  return acc;
}

struct PadeApproximant {
  int L = 0;
  int M = 0;
  std::vector<double> numerator;    // a_0..a_L
  std::vector<double> denominator;  // b_0 = 1, b_1..b_M
  std::vector<Complex> poles;
  std::vector<Complex> zeros;

  Complex operator()(Complex z) const { return polyval(numerator, z) / polyval(denominator, z); }
};

/// [L/M] approximant of sum c_n z^n. Throws a numerical-degeneracy error when
/// the Toeplitz system for the denominator is (numerically) singular.
inline PadeApproximant pade(const std::vector<double>& c, int L, int M) {
  require(L >= 0 && M >= 0, "pade: orders must be non-negative");
  require(static_cast<std::size_t>(L + M) < c.size(), "pade: need at least L + M + 1 coefficients");
  const auto coef = [&](int i) { return i < 0 ? 0.0 : c[static_cast<std::size_t>(i)]; };
  PadeApproximant p;
  p.L = L;
  p.M = M;
  p.denominator.assign(static_cast<std::size_t>(M) + 1, 0.0);
  p.denominator[0] = 1.0;
  if (M > 0) {
    Eigen::MatrixXd a(M, M);
    Eigen::VectorXd rhs(M);
    for (int j = 1; j <= M; ++j) {
      for (int k = 1; k <= M; ++k) a(j - 1, k - 1) = coef(L + j - k);
      rhs(j - 1) = -coef(L + j);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(M - 1) <= 1e-11 * sv(0))
      fail(ErrorKind::numerical_degeneracy,
           "degenerate Pade table at [" + std::to_string(L) + "/" + std::to_string(M) + "]; try a smaller M");
    const Eigen::VectorXd b = svd.solve(rhs);
    for (int k = 1; k <= M; ++k) p.denominator[static_cast<std::size_t>(k)] = b(k - 1);
  }
  p.numerator.assign(static_cast<std::size_t>(L) + 1, 0.0);
  for (int i = 0; i <= L; ++i) {
    double s = 0.0;
    for (int k = 0; k <= std::min(i, M); ++k) s += p.denominator[static_cast<std::size_t>(k)] * coef(i - k);
    p.numerator[static_cast<std::size_t>(i)] = s;
  }
  p.poles = polynomial_roots(p.denominator);
  p.zeros = polynomial_roots(p.numerator);
  return p;
}

struct PoleScreen {
  std::vector<Complex> stable;
  std::vector<Complex> spurious;
};

/// Poles of [L/M] that reappear (within 5%) in an adjacent order and are not
/// cancelled by a numerator zero.
inline PoleScreen screen_poles(const std::vector<double>& c, const PadeApproximant& p) {
  PoleScreen out;
  std::vector<std::vector<Complex>> neighbours;
  for (int dl : {1, -1}) {
    const int l = p.L + dl;
    if (l < 0 || static_cast<std::size_t>(l + p.M) >= c.size()) continue;
    try {
      neighbours.push_back(pade(c, l, p.M).poles);
    } catch (const Error&) {
    }
  }
  for (const Complex& z : p.poles) {
    const double tol = 0.05 * std::abs(z) + 1e-12;
    bool doublet = false;
    for (const Complex& w : p.zeros) doublet = doublet || std::abs(w - z) < 1e-3 * (std::abs(z) + 1e-12);
    bool repeated = neighbours.empty();
    for (const auto& ps : neighbours)
      for (const Complex& w : ps) repeated = repeated || std::abs(w - z) < tol;
    (repeated && !doublet ? out.stable : out.spurious).push_back(z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Series evaluation
// ---------------------------------------------------------------------------

struct PsiMode {
  enum Kind { truncated, pade } kind = truncated;
  int L = -1;
  int M = -1;

  static PsiMode sum() { return {}; }
  static PsiMode approximant(int l, int m) { return {pade, l, m}; }
};

struct PsiValue {
  Complex value;
  double std_error = 0.0;
  std::vector<Complex> poles;
  std::string mode;
};

namespace detail {

inline Complex eval_mode(const std::vector<double>& c, Complex z, const PsiMode& mode) {
  if (mode.kind == PsiMode::truncated) return polyval(c, z);
  return pade(c, mode.L, mode.M)(z);
}

/// Leave-one-batch-out jackknife of a functional of the coefficients.
template <class F>
double jackknife_error(const SusceptibilitySeries& s, F&& functional) {
  const std::size_t nb = s.batch_values.size();
  if (nb < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<Complex> reps;
  std::vector<double> c(s.size());
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t n = 0; n < s.size(); ++n) {
      double sum = 0.0;
      for (std::size_t k = 0; k < nb; ++k)
        if (k != b) sum += s.batch_values[k][n];
      c[n] = sum / static_cast<double>(nb - 1);
    }
    reps.push_back(functional(c));
  }
  Complex mean = 0.0;
  for (auto r : reps) mean += r;
  mean /= static_cast<double>(nb);
  double ss = 0.0;
  for (auto r : reps) ss += std::norm(r - mean);
  return std::sqrt(ss * static_cast<double>(nb - 1) / static_cast<double>(nb));
}

}  // namespace detail

/// Psi(z) as a truncated sum or [L/M] Pade value. Errors: batch jackknife when
/// per-batch coefficients exist, otherwise first-order propagation of the
/// coefficient errors.
inline PsiValue psi_eval(const SusceptibilitySeries& s, Complex z, PsiMode mode = {}) {
  require(!s.coefficients.empty(), "psi_eval: empty series");
  PsiValue out;
  if (mode.kind == PsiMode::pade) {
    const int half = static_cast<int>(s.order() / 2);
    if (mode.L < 0) mode.L = half;
    if (mode.M < 0) mode.M = half;
    const auto p = pade(s.coefficients, mode.L, mode.M);
    for (const Complex& pole : p.poles)
      require(std::abs(z - pole) > 1e-8 * std::max(1.0, std::abs(pole)), "psi_eval: z coincides with a Pade pole");
    out.value = p(z);
    out.poles = p.poles;
    out.mode = "pade[" + std::to_string(mode.L) + "/" + std::to_string(mode.M) + "]";
  } else {
    out.value = polyval(s.coefficients, z);
    out.mode = "truncated";
  }

  const auto functional = [&](const std::vector<double>& c) { return detail::eval_mode(c, z, mode); };
  double err = std::numeric_limits<double>::quiet_NaN();
  if (!s.batch_values.empty()) {
    try {
      err = detail::jackknife_error(s, functional);
    } catch (const Error&) {
    }
  }
  if (!std::isfinite(err)) {
    double var = 0.0;
    std::vector<double> c = s.coefficients;
    for (std::size_t n = 0; n < c.size(); ++n) {
      if (s.std_errors[n] == 0.0) continue;
      if (mode.kind == PsiMode::truncated) {
        var += std::pow(s.std_errors[n] * std::pow(std::abs(z), static_cast<double>(n)), 2);
        continue;
      }
      const double step = 1e-6 * std::max(std::abs(c[n]), s.std_errors[n]);
      c[n] += step;
      const Complex up = functional(c);
      c[n] -= 2 * step;
      const Complex down = functional(c);
      c[n] += step;
      var += std::norm((up - down) / (2 * step) * s.std_errors[n]);
    }
    err = std::sqrt(var);
  }
  out.std_error = err;
  return out;
}

/// Partial sums S_k = sum_{n<=k} c_n z^n.
inline std::vector<Complex> partial_sums(const SusceptibilitySeries& s, Complex z) {
  std::vector<Complex> out;
  Complex acc = 0.0, zn = 1.0;
  for (double c : s.coefficients) {
    acc += c * zn;
    zn *= z;
    out.push_back(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Radius of convergence
// ---------------------------------------------------------------------------

struct RadiusOptions {
  enum Method { root_test, ratio_test, pade_pole } method = root_test;
  std::size_t window_lo = 0;  // 0 and window_hi = 0: upper half of usable n
  std::size_t window_hi = 0;
  double noise_k = 2.0;
  int bootstrap = 200;
  std::uint64_t seed = 1;
  int L = -1;
  int M = -1;
};

inline const char* to_string(RadiusOptions::Method m) {
  switch (m) {
    case RadiusOptions::root_test: return "root-test";
    case RadiusOptions::ratio_test: return "ratio-test";
    case RadiusOptions::pade_pole: return "pade-pole";
  }
  return "unknown";
}

struct RadiusEstimate {
  std::string method;
  double value = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  std::size_t window_lo = 0;
  std::size_t window_hi = 0;
  bool infinite = false;
  bool indeterminate = false;
  double usable_fraction = 0.0;
  int pade_L = 0;
  int pade_M = 0;
  std::vector<Complex> stable_poles;
  std::vector<Complex> screened_poles;
  std::vector<std::string> notes;
};

namespace detail {

inline std::optional<double> root_test(const std::vector<double>& c, const std::vector<double>& se,
                                       const std::vector<std::size_t>& idx) {
  std::vector<double> xs, ys, ss;
  for (auto n : idx) {
    const double v = std::abs(c[n]);
    if (v == 0.0) continue;
    xs.push_back(static_cast<double>(n));
    ys.push_back(std::log(v));
    ss.push_back(se[n] / v);
  }
  if (xs.size() < 2) return std::nullopt;
  return std::exp(-weighted_linear_fit(xs, ys, ss).slope);
}

inline std::optional<double> ratio_test(const std::vector<double>& c, const std::vector<std::size_t>& idx) {
  std::vector<double> ratios;
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    if (idx[i + 1] != idx[i] + 1) continue;
    const double a = std::abs(c[idx[i]]), b = std::abs(c[idx[i + 1]]);
    if (a > 0.0 && b > 0.0) ratios.push_back(a / b);
  }
  if (ratios.empty()) return std::nullopt;
  return quantile(ratios, 0.5);
}

struct PoleResult {
  double modulus;
  int L, M;
  PoleScreen screen;
};

inline std::optional<PoleResult> nearest_pole(const std::vector<double>& c, int L, int M) {
  for (int m = M; m >= 1; --m) {
    if (static_cast<std::size_t>(L + m) >= c.size()) continue;
    try {
      const auto p = pade(c, L, m);
      auto screen = screen_poles(c, p);
      if (screen.stable.empty()) return PoleResult{std::numeric_limits<double>::infinity(), L, m, screen};
      double best = std::numeric_limits<double>::infinity();
      for (auto z : screen.stable) best = std::min(best, std::abs(z));
      return PoleResult{best, L, m, screen};
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Radius of convergence from the coefficient decay. Coefficients within
/// noise_k standard errors of zero are excluded; the default window is the
/// upper half of the remaining n. Confidence intervals are 95% percentiles of
/// a parametric bootstrap over the coefficient errors.
inline RadiusEstimate radius_estimate(const SusceptibilitySeries& s, const RadiusOptions& opt = {}) {
  require(s.order() >= 8, "radius_estimate: need N >= 8");
  RadiusEstimate r;
  r.method = to_string(opt.method);
  const auto& c = s.coefficients;
  const auto& se = s.std_errors;

  bool all_zero = true;
  for (std::size_t n = 0; n < c.size(); ++n) all_zero = all_zero && c[n] == 0.0 && se[n] == 0.0;
  if (all_zero) {
    r.infinite = true;
    r.value = r.ci_lo = r.ci_hi = std::numeric_limits<double>::infinity();
    r.usable_fraction = 0.0;
    r.notes.push_back("all coefficients vanish");
    return r;
  }

  std::vector<std::size_t> usable;
  for (std::size_t n = 0; n < c.size(); ++n)
    if (c[n] != 0.0 && std::abs(c[n]) > opt.noise_k * se[n]) usable.push_back(n);
  r.usable_fraction = static_cast<double>(usable.size()) / static_cast<double>(c.size());
  if (2 * usable.size() < c.size()) r.notes.push_back("fewer than half of the coefficients exceed the noise floor");

  std::vector<std::size_t> window;
  if (opt.window_hi > 0) {
    for (auto n : usable)
      if (n >= opt.window_lo && n <= opt.window_hi) window.push_back(n);
  } else {
    const std::size_t skip = usable.size() / 2;
    window.assign(usable.begin() + static_cast<std::ptrdiff_t>(usable.size() >= 6 ? skip : 0), usable.end());
  }

  const auto fit = [&](const std::vector<double>& cc, const std::vector<double>& ee) -> std::optional<double> {
    switch (opt.method) {
      case RadiusOptions::root_test: return detail::root_test(cc, ee, window);
      case RadiusOptions::ratio_test: return detail::ratio_test(cc, window);
      case RadiusOptions::pade_pole: {
        const int half = static_cast<int>(s.order() / 2);
        const auto p = detail::nearest_pole(cc, opt.L < 0 ? half : opt.L, opt.M < 0 ? half : opt.M);
        if (!p) return std::nullopt;
        return p->modulus;
      }
    }
    return std::nullopt;
  };

  if (opt.method != RadiusOptions::pade_pole && window.size() < 2) {
    r.indeterminate = true;
    r.notes.push_back("coefficients are noise dominated");
    return r;
  }
  if (!window.empty()) {
    r.window_lo = window.front();
    r.window_hi = window.back();
  }

  const auto point = fit(c, se);
  if (!point) {
    r.indeterminate = true;
    r.notes.push_back("estimator undefined on this series");
    return r;
  }
  r.value = *point;
  if (opt.method == RadiusOptions::pade_pole) {
    const int half = static_cast<int>(s.order() / 2);
    const auto p = detail::nearest_pole(c, opt.L < 0 ? half : opt.L, opt.M < 0 ? half : opt.M);
    r.pade_L = p->L;
    r.pade_M = p->M;
    r.stable_poles = p->screen.stable;
    r.screened_poles = p->screen.spurious;
    r.window_lo = 0;
    r.window_hi = static_cast<std::size_t>(p->L + p->M);
  }
  r.infinite = std::isinf(r.value);

  bool noisy = false;
  for (double e : se) noisy = noisy || e > 0.0;
  r.ci_lo = r.ci_hi = r.value;
  if (noisy && opt.bootstrap > 0) {
    Rng rng(derive_seed(opt.seed, 0x7261646975735fULL));
    std::vector<double> reps;
    std::vector<double> cc(c.size());
    for (int b = 0; b < opt.bootstrap; ++b) {
      for (std::size_t n = 0; n < c.size(); ++n) cc[n] = c[n] + se[n] * rng.normal();
      if (const auto v = fit(cc, se); v && !std::isnan(*v)) reps.push_back(*v);
    }
    if (reps.size() >= 10) {
      r.ci_lo = std::min(r.value, quantile(reps, 0.025));
      r.ci_hi = std::max(r.value, quantile(reps, 0.975));
    } else {
      r.notes.push_back("bootstrap replicates mostly undefined; interval collapsed to the point value");
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference response
// ---------------------------------------------------------------------------

struct FiniteDifferenceOptions {
  std::size_t transient = 10000;
  std::size_t length = 100000;
  std::size_t ensemble = 8;
  std::size_t min_transient = 1000;
  std::uint64_t seed = 1;
  int batches = kDefaultBatches;
  int workers = 1;
  std::optional<Box> box;
  bool richardson = false;
};

struct FiniteDifferenceResponse {
  double h = 0.0;
  Estimate plus;
  Estimate minus;
  Estimate derivative;
  std::optional<Estimate> half_step;
  std::optional<Estimate> richardson;
  std::size_t escaped = 0;
};

namespace detail {

inline Estimate streaming_average(const MapFamily& f, double alpha, const Observable& phi,
                                  const FiniteDifferenceOptions& opt, std::uint64_t stream_seed,
                                  std::size_t& escaped) {
  require(opt.transient >= opt.min_transient, "finite_difference_response: transient below minimum");
  require(opt.length > 0 && opt.ensemble > 0, "finite_difference_response: empty sampling");
  const InitialSampler sampler{opt.box ? *opt.box : f.default_box, f.chart, stream_seed};
  const double origin = phi.eval(f.chart.reduce(0.5 * (sampler.box.lo + sampler.box.hi)));
  const std::size_t total = opt.length * opt.ensemble;
  std::vector<BatchAccumulator> parts(opt.ensemble, BatchAccumulator(1, total, static_cast<std::size_t>(opt.batches)));
  std::vector<char> lost(opt.ensemble, 0);
  parallel_for(opt.ensemble, opt.workers, [&](std::size_t k) {
    Rng rng = sampler.stream(k);
    Vec x = sampler.draw(rng);
    BatchAccumulator local(1, total, static_cast<std::size_t>(opt.batches));
    for (std::size_t s = 0; s < opt.transient + opt.length; ++s) {
      if (s >= opt.transient) *local.row_for(k * opt.length + (s - opt.transient)) += phi.eval(x) - origin;
      x = f.apply(alpha, x);
      if (f.escaped(x)) {
        lost[k] = 1;
        return;
      }
    }
    parts[k] = local;
  });
  BatchAccumulator acc(1, total, static_cast<std::size_t>(opt.batches));
  std::size_t lost_count = 0;
  for (std::size_t k = 0; k < opt.ensemble; ++k) {
    if (lost[k])
      ++lost_count;
    else
      acc.merge(parts[k]);
  }
  escaped += lost_count;
  if (2 * lost_count > opt.ensemble)
    fail(ErrorKind::basin_escape, f.name + ": " + std::to_string(lost_count) + " of " +
                                      std::to_string(opt.ensemble) + " members escaped at alpha = " +
                                      std::to_string(alpha));
  Estimate e = acc.estimates()[0];
  e.value += origin;
  return e;
}

}  // namespace detail

/// (rho_{a+h}(phi) - rho_{a-h}(phi)) / 2h with independent seeds per side.
/// The Richardson option adds the h/2 pair and reports (4 D(h/2) - D(h)) / 3.
inline FiniteDifferenceResponse finite_difference_response(const MapFamily& f, double alpha0, double h,
                                                           const Observable& phi,
                                                           const FiniteDifferenceOptions& opt = {}) {
  require(h > 0.0, "finite_difference_response: h must be positive");
  FiniteDifferenceResponse r;
  r.h = h;
  const auto side = [&](double a, std::uint64_t tag) {
    return detail::streaming_average(f, a, phi, opt, derive_seed(opt.seed, tag), r.escaped);
  };
  const auto central = [](const Estimate& p, const Estimate& m, double step) {
    return Estimate{(p.value - m.value) / (2 * step), std::hypot(p.std_error, m.std_error) / (2 * step)};
  };
  r.plus = side(alpha0 + h, 1);
  r.minus = side(alpha0 - h, 2);
  r.derivative = central(r.plus, r.minus, h);
  if (opt.richardson) {
    const Estimate half = central(side(alpha0 + h / 2, 3), side(alpha0 - h / 2, 4), h / 2);
    r.half_step = half;
    r.richardson = Estimate{(4 * half.value - r.derivative.value) / 3,
                            std::hypot(4 * half.std_error, r.derivative.std_error) / 3};
  }
  return r;
}

struct ResponseComparison {
  Estimate psi;
  Estimate derivative;
  double sigma = 0.0;
  bool agree = false;  // within 3 combined sigma
};

inline ResponseComparison compare_response(const Estimate& psi, const Estimate& derivative) {
  ResponseComparison c{psi, derivative, sigma_distance(psi, derivative), false};
  c.agree = c.sigma <= 3.0;
  return c;
}

// ---------------------------------------------------------------------------
// Volume-preserving identity
// ---------------------------------------------------------------------------

struct IdentityRow {
  std::size_t n = 0;
  Estimate kappa;
  Estimate divergence_term;  // rho(div X . phi o f^n)
  Estimate discrepancy;      // kappa_n + divergence_term
  double sigma = 0.0;
  bool pass = false;
};

struct IdentityReport {
  std::vector<IdentityRow> rows;
  bool pass = true;
  std::size_t samples = 0;
};

/// Per-n check of kappa_n = -rho(div X . phi o f^n) on systems preserving a
/// smooth volume, on a common sample set.
inline IdentityReport volume_preserving_identity(const EmpiricalMeasure& m, const PerturbationField& X,
                                                 const Observable& phi, std::size_t N,
                                                 const SusceptibilityOptions& opt = {}) {
  if (!m.family.preserves_volume(m.alpha))
    fail(ErrorKind::precondition, m.family.name + " does not preserve volume at this alpha");
  if (!X.divergence && !X.has_closed_form())
    fail(ErrorKind::unsupported, "volume_preserving_identity: divergence of X is not computable");
  require(N >= 1, "volume_preserving_identity: N must be at least 1");
  std::size_t total = 0;
  const auto ranges = detail::sample_ranges(m, 1, N, total);
  if (total == 0) fail(ErrorKind::insufficient_data, "volume_preserving_identity: orbits too short");
  const std::size_t C = N + 1;
  const auto acc = detail::run_samples(ranges, total, 3 * C, opt.batches, opt.workers,
                                       [&](std::size_t, const detail::SampleRange& r, BatchAccumulator& a) {
    const Trajectory& o = *r.orbit;
    const detail::OrbitWindow w(m.family, m.alpha, phi, o, r.begin, r.end + N, true);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      const Vec x = o[j];
      Vec v = X.at(o[j - 1], x);
      const double div = divergence_at(X, x);
      double* row = a.row_for(r.first + (j - r.begin));
      for (std::size_t n = 0; n <= N; ++n) {
        const double k = w.G(j + n).dot(v);
        const double d = div * w.V(j + n);
        row[n] += k;
        row[C + n] += d;
        row[2 * C + n] += k + d;
        if (n < N) v = w.J(j + n) * v;
      }
    }
  });
  const auto est = acc.estimates();
  IdentityReport rep;
  rep.samples = total;
  for (std::size_t n = 0; n <= N; ++n) {
    IdentityRow row{n, est[n], est[C + n], est[2 * C + n], 0.0, false};
    const double se = row.discrepancy.std_error;
    const double dev = std::abs(row.discrepancy.value);
    row.sigma = se > 0.0 ? dev / se : (dev <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
    row.pass = row.sigma <= 3.0;
    rep.pass = rep.pass && row.pass;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Stable / unstable decomposition
// ---------------------------------------------------------------------------

struct SplitOptions {
  std::size_t refine = 16;        // past steps the seed segment is pushed forward
  std::size_t forward = 16;       // future steps used to resolve E^s
  std::size_t warmup = 64;        // steps used to converge e_u at the seed
  double arc_step = 1e-3;         // stencil spacing along the unstable curve
  double angle_threshold = 1e-3;  // near-tangency exclusion (radians)
  int batches = kDefaultBatches;
  int workers = 1;
};

struct SplitResult {
  SusceptibilitySeries direct;
  SusceptibilitySeries stable;
  SusceptibilitySeries unstable;
  SusceptibilitySeries reconstructed;  // stable + unstable, per sample
  SusceptibilitySeries difference;     // direct - reconstructed, per sample
  std::size_t samples = 0;
  std::size_t excluded = 0;
  double excluded_mass = 0.0;
  int unstable_dim = 0;
  // Mean of ln(|Df^N X^s| / |X^s|) / N over retained samples: the exponential
  // rate at which the stable-term integrand contracts.
  Estimate stable_rate;
};

namespace detail {

/// Annihilator of E^s at y: (Df^m)^T (Df^m t) for a direction t with
/// nonzero unstable component, normalized.
inline Vec stable_annihilator(const MapFamily& f, double alpha, Vec y, Vec t, std::size_t steps) {
  Mat p = Mat::Identity(f.dimension, f.dimension);
  for (std::size_t k = 0; k < steps; ++k) {
    const Mat jac = f.jacobian(alpha, y);
    p = jac * p;
    y = f.lift(alpha, y);
    const double s = p.norm();
    p /= s;
  }
  Vec eta = p.transpose() * (p * t);
  return eta / eta.norm();
}

struct CurveSample {
  double coeff = 0.0;  // eta . X / eta . gamma'
  Vec eta;
  Vec tangent;
  Vec x;
};

inline CurveSample curve_sample(const MapFamily& f, double alpha, const PerturbationField& X, const Vec& seed,
                                const Vec& dir, double u, std::size_t refine, std::size_t forward) {
  const CurvePoint c = push_seed(f, alpha, seed, dir, refine, u);
  CurveSample s;
  s.tangent = c.tangent;
  s.eta = stable_annihilator(f, alpha, c.point, c.tangent, forward);
  s.x = X.along_orbit ? X.along_orbit(c.preimage) : X.closed_form(f.chart.reduce(c.point));
  s.coeff = s.eta.dot(s.x) / s.eta.dot(c.tangent);
  return s;
}

}  // namespace detail

/// Splits kappa_n into rho(X^s . grad(phi o f^n)) and -rho(div^u X^u . phi o f^n)
/// for one-dimensional E^u. div^u is the derivative of the E^u-coordinate of
/// X along the local unstable curve, parametrized by the pre-image segment
/// on which the conditional density is flat.
inline SplitResult stable_unstable_split(const EmpiricalMeasure& m, const PerturbationField& X,
                                         const Observable& phi, std::size_t N, const SplitOptions& opt = {}) {
  require(N >= 1, "stable_unstable_split: N must be at least 1");
  require(!m.empty(), "stable_unstable_split: empty measure");
  const MapFamily& f = m.family;
  const double alpha = m.alpha;

  {
    const Trajectory& o = m.orbits.front();
    const std::size_t steps = std::min<std::size_t>(o.size() - 1, 20000);
    require(steps >= 100, "stable_unstable_split: orbit too short to classify the spectrum");
    const auto spec = benettin_spectrum(TangentCocycle(f, alpha, o), steps);
    const int u = spec.positive_count();
    if (u != 1) fail(ErrorKind::unsupported, "stable_unstable_split: unstable dimension " + std::to_string(u) + " != 1");
  }

  const double phi_mean = birkhoff_average(m, phi, opt.batches).value;
  const std::size_t start = opt.refine + opt.warmup + 1;
  std::size_t total = 0;
  const auto ranges = detail::sample_ranges(m, start, N, total);
  if (total == 0) fail(ErrorKind::insufficient_data, "stable_unstable_split: orbits too short");
  const std::size_t C = N + 1;
  const double sin_min = std::sin(opt.angle_threshold);
  std::vector<std::size_t> excluded(ranges.size(), 0);

  const auto acc = detail::run_samples(ranges, total, 5 * C + 1, opt.batches, opt.workers,
                                       [&](std::size_t unit, const detail::SampleRange& r, BatchAccumulator& a) {
    const Trajectory& o = *r.orbit;
    const std::size_t lo = r.begin - opt.refine - opt.warmup;
    const detail::OrbitWindow w(f, alpha, phi, o, lo, r.end + N, true);
    // e_u along the window by forward transport of a generic vector
    std::vector<Vec> eu(r.end - lo);
    Vec e = Vec::Ones(f.dimension).normalized();
    for (std::size_t j = lo; j < r.end; ++j) {
      eu[j - lo] = e;
      e = w.J(j) * e;
      e /= e.norm();
    }
    for (std::size_t j = r.begin; j < r.end; ++j) {
      double* row = a.row_for(r.first + (j - r.begin));
      const Vec xd = X.at(o[j - 1], o[j]);
      const std::size_t js = j - opt.refine;
      const Vec seed = o[js];
      const Vec dir = eu[js - lo];

      const auto c0 = detail::curve_sample(f, alpha, X, seed, dir, 0.0, opt.refine, opt.forward);
      const double tnorm = c0.tangent.norm();
      const Vec that = c0.tangent / tnorm;
      const bool tangent = std::abs(c0.eta.dot(that)) < sin_min;

      Vec vd = xd, vs = xd;
      double div = 0.0;
      if (tangent) {
        ++excluded[unit];
      } else {
        const double du = opt.arc_step / tnorm;
        double fs[4];
        const double offs[4] = {-2.0, -1.0, 1.0, 2.0};
        for (int k = 0; k < 4; ++k)
          fs[k] = detail::curve_sample(f, alpha, X, seed, dir, offs[k] * du, opt.refine, opt.forward).coeff;
        div = (fs[0] - 8.0 * fs[1] + 8.0 * fs[2] - fs[3]) / (12.0 * du);
        const double cu = c0.eta.dot(xd) / c0.eta.dot(that);
        vs = xd - cu * that;
      }
      const double vs0 = vs.norm();
      for (std::size_t n = 0; n <= N; ++n) {
        const Vec& g = w.G(j + n);
        const double kd = g.dot(vd);
        const double ks = tangent ? 0.0 : g.dot(vs);
        const double ku = tangent ? 0.0 : -div * (w.V(j + n) - phi_mean);
        row[n] += kd;
        row[C + n] += ks;
        row[2 * C + n] += ku;
        row[3 * C + n] += ks + ku;
        row[4 * C + n] += kd - ks - ku;
        if (n < N) {
          vd = w.J(j + n) * vd;
          vs = w.J(j + n) * vs;
        }
      }
      if (!tangent && vs0 > 0.0) row[5 * C] += std::log(vs.norm() / vs0) / static_cast<double>(N);
    }
  });

  SplitResult out;
  out.samples = total;
  out.unstable_dim = 1;
  for (auto e : excluded) out.excluded += e;
  out.excluded_mass = static_cast<double>(out.excluded) / static_cast<double>(total);
  SusceptibilitySeries* parts[5] = {&out.direct, &out.stable, &out.unstable, &out.reconstructed, &out.difference};
  const char* routes[5] = {"direct", "stable", "unstable", "split", "difference"};
  for (std::size_t p = 0; p < 5; ++p) {
    *parts[p] = detail::series_from(acc, p * C, C);
    detail::label(*parts[p], m, X, phi, routes[p]);
  }
  const Estimate rate = acc.estimates()[5 * C];
  const double kept = 1.0 - out.excluded_mass;
  if (kept > 0.0) out.stable_rate = {rate.value / kept, rate.std_error / kept};
  return out;
}

}  // namespace linresp
