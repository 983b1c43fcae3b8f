#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "linresp/error.hpp"
#include "linresp/linalg.hpp"
#include "linresp/maps.hpp"
#include "linresp/parallel.hpp"
#include "linresp/random.hpp"
#include "linresp/stats.hpp"
#include "linresp/tangent.hpp"

namespace linresp {

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniform law on a box of the chart; stream k draws from derive_seed(seed, k).
struct InitialSampler {
  Box box;
  Chart chart;
  std::uint64_t seed = 0;

  static InitialSampler for_family(const MapFamily& f, std::uint64_t seed) {
    return {f.default_box, f.chart, seed};
  }

  Rng stream(std::uint64_t k) const { return Rng(derive_seed(seed, k)); }

  Vec draw(Rng& rng) const {
    Vec x(box.lo.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(box.lo(i), box.hi(i));
    return chart.reduce(x);
  }
};

struct Provenance {
  std::string family;
  double alpha = 0.0;
  std::size_t transient = 0;
  std::size_t length = 0;
  std::size_t ensemble = 0;
  std::uint64_t seed = 0;
};

/// Post-transient orbit segments of the ensemble members that stayed in the
/// basin. Each orbit keeps its time order.
struct EmpiricalMeasure {
  MapFamily family;
  double alpha = 0.0;
  std::vector<Trajectory> orbits;
  std::size_t escaped = 0;
  Provenance provenance;

  int dimension() const { return family.dimension; }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& o : orbits) n += o.size();
    return n;
  }
  bool empty() const { return size() == 0; }
};

struct SamplingOptions {
  std::size_t transient = 10000;
  std::size_t length = 100000;
  std::size_t ensemble = 1;
  std::size_t min_transient = 1000;
  int workers = 1;
};

/// Pushes `ensemble` independent draws of the sampler through `transient`
/// steps and keeps the next `length` points of each surviving orbit.
inline EmpiricalMeasure srb_sample(const MapFamily& family, double alpha, const InitialSampler& sampler,
                                   std::size_t transient, std::size_t length, std::size_t ensemble,
                                   int workers = 1, std::size_t min_transient = 1000) {
  require(length > 0, "srb_sample: length must be positive (empty measure)");
  require(ensemble >= 1, "srb_sample: ensemble must be at least 1");
  require(transient >= min_transient,
          "srb_sample: transient " + std::to_string(transient) + " below minimum " + std::to_string(min_transient));
  require(sampler.box.lo.size() == family.dimension, "srb_sample: sampler dimension mismatch");

  std::vector<std::optional<Trajectory>> members(ensemble);
  parallel_for(ensemble, workers, [&](std::size_t k) {
    Rng rng = sampler.stream(k);
    const Vec x0 = sampler.draw(rng);
    try {
      Vec x = x0;
      for (std::size_t s = 0; s < transient; ++s) {
        x = family.apply(alpha, x);
        if (family.escaped(x)) fail(ErrorKind::basin_escape, "escape", s);
      }
      members[k] = iterate(family, alpha, x, length - 1);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::basin_escape) throw;
    }
  });

  EmpiricalMeasure m;
  m.family = family;
  m.alpha = alpha;
  m.provenance = {family.name, alpha, transient, length, ensemble, sampler.seed};
  for (auto& o : members) {
    if (o)
      m.orbits.push_back(std::move(*o));
    else
      ++m.escaped;
  }
  if (2 * m.escaped > ensemble)
    fail(ErrorKind::basin_escape, family.name + ": " + std::to_string(m.escaped) + " of " +
                                      std::to_string(ensemble) + " ensemble members escaped");
  return m;
}

inline EmpiricalMeasure srb_sample(const MapFamily& family, double alpha, const InitialSampler& sampler,
                                   const SamplingOptions& opt) {
  return srb_sample(family, alpha, sampler, opt.transient, opt.length, opt.ensemble, opt.workers,
                    opt.min_transient);
}

// ---------------------------------------------------------------------------
// Averages
// ---------------------------------------------------------------------------

/// Ergodic average over every stored point, orbit-major, with batch-means
/// error bars.
inline Estimate birkhoff_average(const EmpiricalMeasure& m, const Observable& phi,
                                 int batches = kDefaultBatches) {
  require(!m.empty(), "birkhoff_average: empty measure");
  const std::size_t total = m.size();
  const double origin = phi.eval(m.orbits.front()[0]);
  BatchAccumulator acc(1, total, static_cast<std::size_t>(batches));
  std::size_t k = 0;
  for (const auto& o : m.orbits)
    for (std::size_t j = 0; j < o.size(); ++j) *acc.row_for(k++) += phi.eval(o[j]) - origin;
  Estimate e = acc.estimates()[0];
  e.value += origin;
  return e;
}

// ---------------------------------------------------------------------------
// Correlations
// ---------------------------------------------------------------------------

struct DecayFit {
  bool defined = false;
  double rate = 0.0;  // nu in |C_n| ~ exp(-nu n)
  double rate_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double r_squared = 0.0;
  std::size_t lag_lo = 0;
  std::size_t lag_hi = 0;
  std::size_t points = 0;
};

/// Weighted fit of ln|c_n| = a - nu n over n in [lo, hi], using only values
/// at least `noise_k` standard errors from zero. Undefined with fewer than
/// three usable points.
inline DecayFit fit_exponential_decay(const std::vector<double>& values, const std::vector<double>& errors,
                                      std::size_t lo, std::size_t hi, double noise_k = 2.0) {
  DecayFit fit;
  std::vector<double> xs, ys, ss;
  hi = std::min(hi, values.size() ? values.size() - 1 : 0);
  for (std::size_t n = lo; n <= hi && n < values.size(); ++n) {
    const double v = std::abs(values[n]);
    if (v == 0.0 || v <= noise_k * errors[n]) continue;
    xs.push_back(static_cast<double>(n));
    ys.push_back(std::log(v));
    ss.push_back(errors[n] / v);
  }
  if (xs.size() < 3) return fit;
  const LinearFit lf = weighted_linear_fit(xs, ys, ss);
  fit.defined = true;
  fit.rate = -lf.slope;
  fit.rate_error = lf.slope_error;
  fit.ci_lo = fit.rate - 1.96 * lf.slope_error;
  fit.ci_hi = fit.rate + 1.96 * lf.slope_error;
  fit.r_squared = lf.r_squared;
  fit.lag_lo = static_cast<std::size_t>(xs.front());
  fit.lag_hi = static_cast<std::size_t>(xs.back());
  fit.points = xs.size();
  return fit;
}

struct CorrelationSeries {
  std::vector<double> values;
  std::vector<double> std_errors;
  DecayFit fit;

  std::size_t lags() const { return values.size(); }
};

/// C_n = rho((psi - rho psi)(phi o f^n - rho phi)) for n = 0..N.
inline CorrelationSeries correlation(const EmpiricalMeasure& m, const Observable& psi, const Observable& phi,
                                     std::size_t N, std::size_t fit_lo = 1, std::size_t fit_hi = 0,
                                     int batches = kDefaultBatches) {
  require(!m.empty(), "correlation: empty measure");
  std::size_t samples = 0;
  for (const auto& o : m.orbits)
    if (o.size() > N) samples += o.size() - N;
  if (samples == 0) fail(ErrorKind::insufficient_data, "correlation: orbits shorter than N + 1");
  const double mpsi = birkhoff_average(m, psi, batches).value;
  const double mphi = birkhoff_average(m, phi, batches).value;

  BatchAccumulator acc(N + 1, samples, static_cast<std::size_t>(batches));
  std::size_t k = 0;
  std::vector<double> a, b;
  for (const auto& o : m.orbits) {
    if (o.size() <= N) continue;
    a.resize(o.size());
    b.resize(o.size());
    for (std::size_t j = 0; j < o.size(); ++j) {
      const Vec x = o[j];
      a[j] = psi.eval(x) - mpsi;
      b[j] = phi.eval(x) - mphi;
    }
    for (std::size_t j = 0; j + N < o.size(); ++j) {
      double* row = acc.row_for(k++);
      for (std::size_t n = 0; n <= N; ++n) row[n] += a[j] * b[j + n];
    }
  }
  CorrelationSeries out;
  for (const auto& e : acc.estimates()) {
    out.values.push_back(e.value);
    out.std_errors.push_back(e.std_error);
  }
  out.fit = fit_exponential_decay(out.values, out.std_errors, fit_lo, fit_hi ? fit_hi : N);
  return out;
}

// ---------------------------------------------------------------------------
// Dimensions
// ---------------------------------------------------------------------------

struct DimensionEstimate {
  double kaplan_yorke = 0.0;
  double stable_dim = 0.0;
  double stable_lo = 0.0;
  double stable_hi = 0.0;
  double uncertainty = 0.0;
  std::string method;
  int unstable_count = 0;
  int stable_count = 0;
};

inline double kaplan_yorke_dimension(std::vector<double> exps) {
  std::sort(exps.begin(), exps.end(), std::greater<>());
  double sum = 0.0;
  std::size_t k = 0;
  while (k < exps.size() && sum + exps[k] >= 0.0) sum += exps[k++];
  if (k == exps.size()) return static_cast<double>(exps.size());
  if (k == 0) return 0.0;
  return static_cast<double>(k) + sum / std::abs(exps[k]);
}

/// Kaplan-Yorke dimension and the entropy-ratio stable dimension h / |lambda^s|
/// with h the sum of the positive exponents. With several contracting
/// exponents the ratio is bracketed and the Kaplan-Yorke excess over dim E^u
/// is reported as the point value, clamped into the bracket.
inline DimensionEstimate dimension_estimates(const LyapunovSpectrum& s, double zero_floor = kZeroExponentFloor) {
  check_hyperbolic(s, zero_floor);
  DimensionEstimate d;
  d.kaplan_yorke = kaplan_yorke_dimension(s.exponents);
  double h = 0.0, h_var = 0.0;
  std::vector<std::size_t> stable;
  for (std::size_t i = 0; i < s.exponents.size(); ++i) {
    if (s.exponents[i] > 0.0) {
      h += s.exponents[i];
      h_var += s.std_errors[i] * s.std_errors[i];
      ++d.unstable_count;
    } else {
      stable.push_back(i);
    }
  }
  d.stable_count = static_cast<int>(stable.size());
  if (h == 0.0) {
    d.method = "trivial-attractor";
    return d;
  }
  if (stable.empty()) {
    d.method = "no-stable-direction";
    return d;
  }
  const auto ratio = [&](std::size_t i) { return h / std::abs(s.exponents[i]); };
  if (stable.size() == 1) {
    const std::size_t i = stable.front();
    d.stable_dim = ratio(i);
    d.stable_lo = d.stable_hi = d.stable_dim;
    const double rel_h = std::sqrt(h_var) / h;
    const double rel_s = s.std_errors[i] / std::abs(s.exponents[i]);
    d.uncertainty = d.stable_dim * std::hypot(rel_h, rel_s);
    d.method = "entropy-ratio";
    return d;
  }
  const double cap = static_cast<double>(stable.size());
  d.stable_lo = std::min(cap, ratio(stable.back()));
  d.stable_hi = std::min(cap, ratio(stable.front()));
  d.stable_dim = std::clamp(d.kaplan_yorke - d.unstable_count, d.stable_lo, d.stable_hi);
  d.uncertainty = 0.5 * (d.stable_hi - d.stable_lo);
  d.method = "entropy-ratio-interval";
  return d;
}

}  // namespace linresp
