#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "linresp/error.hpp"
#include "linresp/linalg.hpp"
#include "linresp/maps.hpp"
#include "linresp/measure.hpp"
#include "linresp/parallel.hpp"
#include "linresp/stats.hpp"
#include "linresp/tangent.hpp"

namespace linresp {

// ---------------------------------------------------------------------------
// Fold detection
// ---------------------------------------------------------------------------

struct FoldPoint {
  std::size_t index = 0;  // position in the cocycle orbit
  Vec point;
  double angle = 0.0;
  std::size_t members = 1;
};

/// Orbit points whose E^u/E^s angle is strictly below `threshold`, grouped
/// greedily by chart distance `cluster_radius` in order of increasing angle.
/// Each cluster is represented by its smallest-angle member.
inline std::vector<FoldPoint> detect_folds(const TangentCocycle& cocycle, const OseledetsSplitting& split,
                                           double threshold, double cluster_radius = 0.05) {
  if (split.dimension != 2 || split.unstable_dim != 1)
    fail(ErrorKind::unsupported, "detect_folds: needs a planar splitting with dim E^u = dim E^s = 1");
  const AngleSeries angles = splitting_angles(split);
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < angles.angles.size(); ++i)
    if (angles.angles[i] < threshold) hits.push_back(i);
  std::stable_sort(hits.begin(), hits.end(),
                   [&](std::size_t a, std::size_t b) { return angles.angles[a] < angles.angles[b]; });

  const Chart& chart = cocycle.family().chart;
  std::vector<FoldPoint> folds;
  for (std::size_t i : hits) {
    const Vec x = cocycle.orbit()[split.offset + i];
    bool joined = false;
    for (auto& f : folds) {
      if (chart.displacement(f.point, x).norm() <= cluster_radius) {
        ++f.members;
        joined = true;
        break;
      }
    }
    if (!joined) folds.push_back({split.offset + i, x, angles.angles[i], 1});
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Projection along stable directions
// ---------------------------------------------------------------------------

/// The line base + theta * direction, together with the unit normal to E^s
/// at the base point. Samples farther than `radius` from the base lie outside
/// the neighborhood and are skipped.
struct TransversalFrame {
  Vec base;
  Vec direction;
  Vec stable_normal;
  Chart chart;
  double min_angle = 1e-2;
  double radius = std::numeric_limits<double>::infinity();

  static TransversalFrame make(const Chart& chart, const Vec& base, const Vec& direction, const Vec& stable_normal,
                               double min_angle = 1e-2, double radius = std::numeric_limits<double>::infinity()) {
    require(direction.norm() > 0.0 && stable_normal.norm() > 0.0, "TransversalFrame: zero direction");
    require(min_angle >= 0.0, "TransversalFrame: min_angle must be nonnegative");
    require(radius > 0.0, "TransversalFrame: radius must be positive");
    return {base, direction / direction.norm(), stable_normal / stable_normal.norm(), chart, min_angle, radius};
  }

  Vec offset(const Vec& p) const { return chart.displacement(base, p); }
  Vec at(double theta) const { return base + theta * direction; }

  /// First-order projection of p along the hyperplane with unit normal `eta`.
  std::optional<double> theta(const Vec& p, const Vec& eta) const {
    const double c = eta.dot(direction);
    if (std::abs(c) < std::sin(min_angle)) return std::nullopt;
    return eta.dot(offset(p)) / c;
  }
  std::optional<double> theta(const Vec& p) const { return theta(p, stable_normal); }
};

struct ProjectedSamples {
  std::vector<double> theta;
  std::vector<double> weights;
  double source_weight = 0.0;
  double excluded_weight = 0.0;
  std::size_t excluded = 0;
  std::size_t outside = 0;

  std::size_t size() const { return theta.size(); }
  double projected_weight() const {
    double w = 0.0;
    for (double x : weights) w += x;
    return w;
  }
};

/// Projects each point along its own stable hyperplane (unit normal in
/// `normals`) onto the frame line. Points whose stable hyperplane meets the
/// line at less than the frame's minimum angle are excluded and counted;
/// more than 20% excluded weight is a frame misalignment.
inline ProjectedSamples project_along_stable(const TransversalFrame& frame, const std::vector<Vec>& points,
                                             const std::vector<Vec>& normals, std::vector<double> weights = {},
                                             int workers = 1) {
  require(points.size() == normals.size(), "project_along_stable: points/normals size mismatch");
  if (weights.empty()) weights.assign(points.size(), 1.0);
  require(weights.size() == points.size(), "project_along_stable: weights size mismatch");

  constexpr std::size_t kChunk = 1 << 14;
  const std::size_t chunks = (points.size() + kChunk - 1) / kChunk;
  std::vector<ProjectedSamples> parts(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    ProjectedSamples& out = parts[c];
    const std::size_t end = std::min(points.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      if (frame.offset(points[i]).norm() > frame.radius) {
        ++out.outside;
        continue;
      }
      out.source_weight += weights[i];
      const Vec eta = normals[i] / normals[i].norm();
      if (const auto t = frame.theta(points[i], eta)) {
        out.theta.push_back(*t);
        out.weights.push_back(weights[i]);
      } else {
        ++out.excluded;
        out.excluded_weight += weights[i];
      }
    }
  });

  ProjectedSamples all;
  for (auto& p : parts) {
    all.theta.insert(all.theta.end(), p.theta.begin(), p.theta.end());
    all.weights.insert(all.weights.end(), p.weights.begin(), p.weights.end());
    all.source_weight += p.source_weight;
    all.excluded_weight += p.excluded_weight;
    all.excluded += p.excluded;
    all.outside += p.outside;
  }
  if (all.source_weight > 0.0 && all.excluded_weight > 0.2 * all.source_weight)
    fail(ErrorKind::numerical_degeneracy,
         "project_along_stable: frame misalignment, " + std::to_string(all.excluded) + " samples (" +
             std::to_string(100.0 * all.excluded_weight / all.source_weight) +
             "% of weight) have stable directions within min_angle of the frame line");
  return all;
}

/// Orbit points of a splitting projected with their CLV stable normals.
inline ProjectedSamples project_along_stable(const TransversalFrame& frame, const TangentCocycle& cocycle,
                                             const OseledetsSplitting& split, int workers = 1) {
  std::vector<Vec> points, normals;
  points.reserve(split.size());
  normals.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    points.push_back(cocycle.orbit()[split.offset + i]);
    normals.push_back(split.stable_normal(i));
  }
  return project_along_stable(frame, points, normals, {}, workers);
}

// ---------------------------------------------------------------------------
// Density profiles
// ---------------------------------------------------------------------------

/// Delta(theta) sampled at `theta`. Histogram profiles carry batch-means
/// errors; synthetic ones carry zeros. `mass` counts the weight that fell
/// inside [lo, hi].
struct DensityProfile {
  std::vector<double> theta;
  std::vector<double> values;
  std::vector<double> std_errors;
  double bandwidth = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double mass = 0.0;
  double outside_mass = 0.0;
  std::size_t samples = 0;
  bool cell_average = false;

  std::size_t size() const { return values.size(); }
  double integral() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * bandwidth;
  }
};

struct DensityOptions {
  std::optional<double> lo;
  std::optional<double> hi;
  int batches = kDefaultBatches;
  std::size_t min_samples = 1000;
};

/// Histogram estimate with bin width `bandwidth`. The default range spans the
/// data, so the profile integrates to the projected weight.
inline DensityProfile density_profile(const ProjectedSamples& s, double bandwidth, const DensityOptions& opt = {}) {
  require(bandwidth > 0.0 && std::isfinite(bandwidth), "density_profile: bandwidth must be positive");
  if (s.size() < opt.min_samples)
    fail(ErrorKind::insufficient_data, "density_profile: " + std::to_string(s.size()) + " projected samples, need " +
                                           std::to_string(opt.min_samples));
  const auto [mn, mx] = std::minmax_element(s.theta.begin(), s.theta.end());
  const double lo = opt.lo.value_or(*mn);
  const double hi_req = opt.hi.value_or(*mx);
  require(hi_req >= lo, "density_profile: empty range");
  const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi_req - lo) / bandwidth)));

  DensityProfile p;
  p.bandwidth = bandwidth;
  p.lo = lo;
  p.hi = lo + static_cast<double>(bins) * bandwidth;
  p.samples = s.size();
  p.cell_average = true;
  const double n = static_cast<double>(s.size());
  BatchAccumulator acc(bins, s.size(), static_cast<std::size_t>(std::max(1, opt.batches)));
  for (std::size_t i = 0; i < s.size(); ++i) {
    double* row = acc.row_for(i);
    const double t = s.theta[i];
    const bool last_edge = !opt.hi && t == *mx;
    if (t < lo || (t >= p.hi && !last_edge)) {
      p.outside_mass += s.weights[i];
      continue;
    }
    const auto b = std::min(bins - 1, static_cast<std::size_t>((t - lo) / bandwidth));
    row[b] += n * s.weights[i] / bandwidth;
    p.mass += s.weights[i];
  }
  for (std::size_t b = 0; b < bins; ++b) p.theta.push_back(lo + (static_cast<double>(b) + 0.5) * bandwidth);
  for (const auto& e : acc.estimates()) {
    p.values.push_back(std::max(0.0, e.value));
    p.std_errors.push_back(e.std_error);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic fold convolution
// ---------------------------------------------------------------------------

/// A measure on the line made of uniform pieces and atoms (a == b).
struct SigmaSpec {
  struct Piece {
    double a = 0.0;
    double b = 0.0;
    double mass = 0.0;
  };

  std::string label;
  double dimension = 1.0;
  std::vector<Piece> pieces;  // sorted by a

  double mass() const {
    double m = 0.0;
    for (const auto& p : pieces) m += p.mass;
    return m;
  }

  /// psi(tau) = sigma((-inf, tau)).
  double psi(double tau) const {
    double m = 0.0;
    for (const auto& p : pieces) {
      if (p.a >= tau) break;
      m += p.b > p.a ? p.mass * std::min(1.0, (tau - p.a) / (p.b - p.a)) : p.mass;
    }
    return m;
  }

  static SigmaSpec uniform(double lo = 0.0, double hi = 1.0) {
    require(hi > lo, "SigmaSpec::uniform: empty interval");
    return {"uniform", 1.0, {{lo, hi, 1.0}}};
  }

  /// Self-similar Cantor measure on [0,1] keeping [0, r] and [1 - r, 1] at
  /// every level, resolved to 2^levels uniform pieces.
  static SigmaSpec cantor(double ratio, int levels) {
    require(ratio > 0.0 && ratio < 0.5, "SigmaSpec::cantor: ratio must lie in (0, 1/2)");
    require(levels >= 0 && levels <= 24, "SigmaSpec::cantor: levels must lie in [0, 24]");
    std::vector<Piece> cur{{0.0, 1.0, 1.0}};
    for (int l = 0; l < levels; ++l) {
      std::vector<Piece> next;
      next.reserve(cur.size() * 2);
      for (const auto& p : cur) {
        const double w = (p.b - p.a) * ratio;
        next.push_back({p.a, p.a + w, 0.5 * p.mass});
        next.push_back({p.b - w, p.b, 0.5 * p.mass});
      }
      cur.swap(next);
    }
    return {"cantor:" + std::to_string(ratio), std::log(2.0) / std::log(1.0 / ratio), std::move(cur)};
  }

  static SigmaSpec discrete(const std::vector<double>& atoms, std::vector<double> weights = {}) {
    require(!atoms.empty(), "SigmaSpec::discrete: no atoms");
    if (weights.empty()) weights.assign(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
    require(weights.size() == atoms.size(), "SigmaSpec::discrete: weights size mismatch");
    SigmaSpec s{"discrete", 0.0, {}};
    for (std::size_t i = 0; i < atoms.size(); ++i) s.pieces.push_back({atoms[i], atoms[i], weights[i]});
    std::sort(s.pieces.begin(), s.pieces.end(), [](const Piece& x, const Piece& y) { return x.a < y.a; });
    return s;
  }

  static SigmaSpec mixture(double w, const SigmaSpec& x, const SigmaSpec& y) {
    require(w >= 0.0 && w <= 1.0, "SigmaSpec::mixture: weight must lie in [0, 1]");
    SigmaSpec s{"mixture(" + x.label + "," + y.label + ")", std::min(x.dimension, y.dimension), {}};
    for (auto p : x.pieces) s.pieces.push_back({p.a, p.b, w * p.mass});
    for (auto p : y.pieces) s.pieces.push_back({p.a, p.b, (1.0 - w) * p.mass});
    std::stable_sort(s.pieces.begin(), s.pieces.end(), [](const Piece& a, const Piece& b) { return a.a < b.a; });
    return s;
  }
};

struct ConvolutionOptions {
  std::size_t grid = 1 << 12;  // intervals of [lo, hi]
  double lo = 0.0;
  double hi = 1.0;
  bool two_sided = false;
  bool cell_average = false;  // average over grid cells instead of point values
  int workers = 1;
};

namespace detail {

// Kernel K_T(s) = s^{-1/2} on 0 < s <= T (mirrored when two-sided), its
// antiderivative A and second antiderivative H, plus divided differences
// written to avoid cancellation when the arguments are close.

inline double kernel_a1(double s, double T) { return s > 0.0 ? 2.0 * std::sqrt(std::min(s, T)) : 0.0; }

inline double kernel_h1(double s, double T) {
  if (s <= 0.0) return 0.0;
  if (s <= T) return 4.0 / 3.0 * s * std::sqrt(s);
  return 4.0 / 3.0 * T * std::sqrt(T) + 2.0 * std::sqrt(T) * (s - T);
}

/// (A(x) - A(y)) / w for x = y + w, one-sided.
inline double a_slope1(double x, double y, double w, double T) {
  if (x <= 0.0 || y >= T) return 0.0;
  if (y >= 0.0 && x <= T) return 2.0 / (std::sqrt(x) + std::sqrt(y));
  return (kernel_a1(x, T) - kernel_a1(y, T)) / w;
}

/// (H(x) - H(y)) / w for x = y + w, one-sided.
inline double h_slope1(double x, double y, double w, double T) {
  if (x <= 0.0) return 0.0;
  if (y >= T) return 2.0 * std::sqrt(T);
  if (y >= 0.0 && x <= T) {
    const double sx = std::sqrt(x), sy = std::sqrt(y);
    return 4.0 / 3.0 * (x + sx * sy + y) / (sx + sy);
  }
  return (kernel_h1(x, T) - kernel_h1(y, T)) / w;
}

inline double a_slope(double x, double y, double w, double T, bool two_sided) {
  if (!two_sided || y >= 0.0) return a_slope1(x, y, w, T);
  if (x <= 0.0) return a_slope1(-y, -x, w, T);
  return (kernel_a1(x, T) + kernel_a1(-y, T)) / w;
}

inline double h_slope(double x, double y, double w, double T, bool two_sided) {
  if (!two_sided || y >= 0.0) return h_slope1(x, y, w, T);
  if (x <= 0.0) return -h_slope1(-y, -x, w, T);
  return (kernel_h1(x, T) - kernel_h1(-y, T)) / w;
}

inline double kernel(double s, double T, bool two_sided) {
  if (two_sided) s = std::abs(s);
  if (s == 0.0) return std::numeric_limits<double>::infinity();
  return s > 0.0 && s <= T ? 1.0 / std::sqrt(s) : 0.0;
}

}  // namespace detail

/// Delta(theta) = integral of K_T(theta - tau) d psi(tau) with K_T the
/// one-sided (or two-sided) inverse square root kernel cut off at T. Each
/// uniform piece and atom of sigma is integrated against the kernel in
/// closed form, so the result is exact for the given piecewise measure.
inline DensityProfile synthetic_fold_convolution(const SigmaSpec& sigma, double T,
                                                 const ConvolutionOptions& opt = {}) {
  require(opt.grid >= (1u << 10), "synthetic_fold_convolution: grid resolution must be at least 2^10");
  require(opt.hi > opt.lo, "synthetic_fold_convolution: empty grid range");
  require(T > 0.0, "synthetic_fold_convolution: cutoff T must be positive");
  require(std::abs(sigma.mass() - 1.0) < 1e-9, "synthetic_fold_convolution: sigma must be normalized");

  const double h = (opt.hi - opt.lo) / static_cast<double>(opt.grid);
  const std::size_t points = opt.cell_average ? opt.grid : opt.grid + 1;
  DensityProfile p;
  p.bandwidth = h;
  p.lo = opt.lo;
  p.hi = opt.hi;
  p.mass = sigma.mass();
  p.cell_average = opt.cell_average;
  p.theta.resize(points);
  p.values.assign(points, 0.0);
  p.std_errors.assign(points, 0.0);

  std::vector<double> starts;
  starts.reserve(sigma.pieces.size());
  double widest = 0.0;
  for (const auto& q : sigma.pieces) {
    starts.push_back(q.a);
    widest = std::max(widest, q.b - q.a);
  }

  const double reach = T + h + widest;
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (points + kChunk - 1) / kChunk;
  parallel_for(chunks, opt.workers, [&](std::size_t c) {
    const std::size_t end = std::min(points, (c + 1) * kChunk);
    for (std::size_t k = c * kChunk; k < end; ++k) {
      const double left = opt.lo + static_cast<double>(k) * h;
      const double theta = opt.cell_average ? left + 0.5 * h : left;
      p.theta[k] = theta;
      const double upper = opt.two_sided ? theta + reach : theta + h;
      const auto first = static_cast<std::size_t>(
          std::lower_bound(starts.begin(), starts.end(), theta - reach) - starts.begin());
      double acc = 0.0;
      for (std::size_t j = first; j < sigma.pieces.size() && starts[j] <= upper; ++j) {
        const auto& q = sigma.pieces[j];
        const double w = q.b - q.a;
        if (!opt.cell_average) {
          acc += w > 0.0 ? q.mass * detail::a_slope(theta - q.a, theta - q.b, w, T, opt.two_sided)
                         : q.mass * detail::kernel(theta - q.a, T, opt.two_sided);
        } else if (w > 0.0) {
          const double gd = detail::h_slope(left + h - q.a, left + h - q.b, w, T, opt.two_sided);
          const double gc = detail::h_slope(left - q.a, left - q.b, w, T, opt.two_sided);
          acc += q.mass * (gd - gc) / h;
        } else {
          acc += q.mass * detail::a_slope(left + h - q.a, left - q.a, h, T, opt.two_sided);
        }
      }
      p.values[k] = acc;
    }
  });
  return p;
}

// ---------------------------------------------------------------------------
// Hoelder exponents
// ---------------------------------------------------------------------------

struct HolderEstimate {
  double exponent = 0.0;
  double intercept = 0.0;
  double std_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double residual = 0.0;
  double scale_lo = 0.0;
  double scale_hi = 0.0;
  double decades = 0.0;
  bool capped = false;
  bool at_noise_floor = false;
  bool monotone = true;
  bool reliable = true;
  std::vector<double> scales;
  std::vector<double> modulus;
};

struct HolderOptions {
  double min_scale = 0.0;  // 0: one grid step
  double max_scale = 0.0;  // 0: one eighth of the span
  double noise_floor = 1e-12;  // relative to max |f|
  double monotone_tolerance = 0.1;
  double min_decades = 1.5;
};

/// Slope of log sup_k |f(k + s) - f(k)| against log(s * spacing) over dyadic
/// steps s. Increments at or below the noise floor are dropped; if none
/// remain the exponent is reported as 1 and flagged.
inline HolderEstimate holder_exponent(const std::vector<double>& f, double spacing, const HolderOptions& opt = {}) {
  require(spacing > 0.0, "holder_exponent: spacing must be positive");
  require(f.size() >= 8, "holder_exponent: need at least 8 samples");
  for (double v : f) require(std::isfinite(v), "holder_exponent: samples must be finite");

  const double span = spacing * static_cast<double>(f.size() - 1);
  const double smin = opt.min_scale > 0.0 ? opt.min_scale : spacing;
  const double smax = opt.max_scale > 0.0 ? opt.max_scale : span / 8.0;
  double fmax = 0.0;
  for (double v : f) fmax = std::max(fmax, std::abs(v));
  const double floor = opt.noise_floor * std::max(1.0, fmax);

  HolderEstimate est;
  std::vector<double> xs, ys;
  for (std::size_t s = 1; s < f.size(); s *= 2) {
    const double delta = static_cast<double>(s) * spacing;
    if (delta > smax * (1.0 + 1e-12)) break;
    if (delta < smin * (1.0 - 1e-12)) continue;
    double w = 0.0;
    for (std::size_t k = 0; k + s < f.size(); ++k) w = std::max(w, std::abs(f[k + s] - f[k]));
    if (!est.modulus.empty() && w < (1.0 - opt.monotone_tolerance) * est.modulus.back()) est.monotone = false;
    est.scales.push_back(delta);
    est.modulus.push_back(w);
    if (w > floor) {
      xs.push_back(std::log(delta));
      ys.push_back(std::log(w));
    }
  }
  if (!est.scales.empty()) {
    est.scale_lo = est.scales.front();
    est.scale_hi = est.scales.back();
    est.decades = std::log10(est.scale_hi / est.scale_lo);
  }
  if (xs.size() < 2) {
    est.exponent = 1.0;
    est.capped = true;
    est.at_noise_floor = true;
    est.reliable = false;
    est.ci_lo = 1.0;
    est.ci_hi = std::numeric_limits<double>::infinity();
    return est;
  }
  const LinearFit fit = linear_fit(xs, ys);
  est.exponent = fit.slope;
  est.intercept = fit.intercept;
  est.std_error = fit.slope_error;
  est.residual = fit.residual_rms;
  if (est.exponent > 1.0 + 1e-9) est.capped = true;
  est.exponent = std::min(est.exponent, 1.0);
  est.ci_lo = est.exponent - 1.96 * est.std_error;
  est.ci_hi = std::min(1.0, est.exponent + 1.96 * est.std_error);
  est.reliable = est.monotone && !est.capped && est.decades >= opt.min_decades;
  return est;
}

inline HolderEstimate holder_exponent(const DensityProfile& p, const HolderOptions& opt = {}) {
  return holder_exponent(p.values, p.bandwidth, opt);
}

// ---------------------------------------------------------------------------
// Counting functions
// ---------------------------------------------------------------------------

struct CountingFunction {
  std::vector<double> thetas;      // sorted
  std::vector<double> cumulative;  // psi just after each theta, normalized to 1
  double exponent = 0.0;
  double std_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double holder_constant = 0.0;
  bool atomic = false;
  bool reliable = true;
  std::vector<double> scales;
  std::vector<double> boxes;

  /// psi(tau) = weight of fold parameters strictly below tau.
  double psi(double tau) const {
    const auto it = std::lower_bound(thetas.begin(), thetas.end(), tau);
    if (it == thetas.begin()) return 0.0;
    return cumulative[static_cast<std::size_t>(it - thetas.begin()) - 1];
  }
};

struct CountingOptions {
  std::size_t min_points = 100;
  int coarsest = 2;          // first dyadic level 2^-j used in the fit
  double saturation = 16.0;  // stop once occupied boxes exceed points / saturation
  int finest = 40;
};

/// Weighted empirical CDF of fold parameters and its box-counting exponent on
/// the range rescaled to [0, 1]. `holder_constant` is the smallest C with
/// psi-increment <= C eps^exponent over every dyadic box in the fit range.
inline CountingFunction counting_function(const std::vector<double>& thetas, std::vector<double> weights = {},
                                          const CountingOptions& opt = {}) {
  if (thetas.size() < opt.min_points)
    fail(ErrorKind::insufficient_data, "counting_function: " + std::to_string(thetas.size()) +
                                           " fold parameters, need " + std::to_string(opt.min_points));
  if (weights.empty()) weights.assign(thetas.size(), 1.0);
  require(weights.size() == thetas.size(), "counting_function: weights size mismatch");
  for (std::size_t i = 0; i < thetas.size(); ++i)
    require(std::isfinite(thetas[i]) && weights[i] >= 0.0, "counting_function: bad fold parameter or weight");

  std::vector<std::size_t> order(thetas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return thetas[a] < thetas[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0, "counting_function: total weight must be positive");

  CountingFunction cf;
  double run = 0.0;
  for (std::size_t i : order) {
    run += weights[i];
    cf.thetas.push_back(thetas[i]);
    cf.cumulative.push_back(run / total);
  }
  const double lo = cf.thetas.front(), hi = cf.thetas.back();
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    cf.atomic = true;
    cf.reliable = false;
    return cf;
  }

  std::vector<double> xs, ys;
  std::vector<double> masses;
  const double n = static_cast<double>(thetas.size());
  for (int j = opt.coarsest; j <= opt.finest; ++j) {
    const double boxes = std::ldexp(1.0, j);
    masses.clear();
    double last = -1.0, mass = 0.0;
    for (std::size_t i = 0; i < cf.thetas.size(); ++i) {
      const double u = (cf.thetas[i] - lo) / (hi - lo);
      const double b = std::min(boxes - 1.0, std::floor(u * boxes));
      const double w = weights[order[i]] / total;
      if (b != last) {
        if (last >= 0.0 && mass > 0.0) masses.push_back(mass);
        last = b;
        mass = 0.0;
      }
      mass += w;
    }
    if (mass > 0.0) masses.push_back(mass);
    const double occupied = static_cast<double>(masses.size());
    if (occupied > n / opt.saturation) break;
    cf.scales.push_back(1.0 / boxes);
    cf.boxes.push_back(occupied);
    xs.push_back(std::log(boxes));
    ys.push_back(std::log(occupied));
  }
  if (xs.size() < 3) {
    cf.reliable = false;
    if (xs.size() < 2) return cf;
  }
  const LinearFit fit = linear_fit(xs, ys);
  cf.exponent = std::clamp(fit.slope, 0.0, 1.0);
  cf.std_error = fit.slope_error;
  cf.ci_lo = std::max(0.0, cf.exponent - 1.96 * fit.slope_error);
  cf.ci_hi = std::min(1.0, cf.exponent + 1.96 * fit.slope_error);

  for (double eps : cf.scales) {
    const double boxes = 1.0 / eps;
    double last = -1.0, mass = 0.0;
    const auto flush = [&] { cf.holder_constant = std::max(cf.holder_constant, mass / std::pow(eps, cf.exponent)); };
    for (std::size_t i = 0; i < cf.thetas.size(); ++i) {
      const double u = (cf.thetas[i] - lo) / (hi - lo);
      const double b = std::min(boxes - 1.0, std::floor(u * boxes));
      if (b != last) {
        flush();
        last = b;
        mass = 0.0;
      }
      mass += weights[order[i]] / total;
    }
    flush();
  }
  return cf;
}

// ---------------------------------------------------------------------------
// Fold parameters of unstable leaves
// ---------------------------------------------------------------------------

struct FoldScanOptions {
  double radius = 0.05;      // neighborhood of the fold representative
  double half_width = 0.1;   // unstable segment half length
  std::size_t refine = 12;
  std::size_t max_leaves = 4000;
  double min_angle = 1e-2;
};

struct FoldScan {
  TransversalFrame frame;
  std::vector<double> thetas;
  std::vector<std::size_t> leaf_index;  // orbit index of the sample whose leaf produced each theta
  std::size_t leaves = 0;
  std::size_t leaves_with_fold = 0;
  std::size_t escaped = 0;  // leaves whose segment left the domain
};

/// Vertex of the parabola through three equally spaced samples, as an offset
/// in steps from the middle one, and its value.
inline std::pair<double, double> parabola_vertex(double y0, double y1, double y2) {
  const double curv = y0 - 2.0 * y1 + y2;
  if (curv == 0.0) return {0.0, y1};
  const double t = 0.5 * (y0 - y2) / curv;
  return {t, y1 - 0.25 * (y0 - y2) * t};
}

/// For each orbit sample near the fold representative, grows the local
/// unstable leaf through it and records theta at every turning point of the
/// leaf's projection onto the frame line, i.e. where the leaf is tangent to
/// the stable direction at the base point.
inline FoldScan scan_fold_parameters(const TangentCocycle& cocycle, const OseledetsSplitting& split,
                                     const FoldPoint& fold, const FoldScanOptions& opt = {}) {
  require(fold.index >= split.offset && fold.index - split.offset < split.size(),
          "scan_fold_parameters: fold point outside the splitting window");
  require(opt.radius > 0.0 && opt.half_width > 0.0, "scan_fold_parameters: radius and half_width must be positive");
  const MapFamily& f = cocycle.family();
  const Vec eta = split.stable_normal(fold.index - split.offset);
  FoldScan scan;
  scan.frame = TransversalFrame::make(f.chart, fold.point, eta, eta, opt.min_angle, opt.radius);
  const TransversalFrame& fr = scan.frame;

  // Golden-section search for the extremum of theta(u) on the bracket
  // around sample k of the leaf; `sign` is +1 for a maximum.
  const auto refine_turning_point = [&](const UnstableSegment& seg, std::size_t k, double sign) {
    const auto value = [&](double u) {
      const CurvePoint c = push_seed(f, cocycle.alpha(), seg.seed, seg.direction, seg.steps, u);
      return sign * eta.dot(f.chart.displacement(fr.base, c.point - seg.shift));
    };
    constexpr double kGolden = 0.6180339887498949;
    double lo = seg.points[k - 1].u, hi = seg.points[k + 1].u;
    double x1 = hi - kGolden * (hi - lo), x2 = lo + kGolden * (hi - lo);
    double f1 = value(x1), f2 = value(x2);
    for (int it = 0; it < 80 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
      if (f1 > f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - kGolden * (hi - lo);
        f1 = value(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + kGolden * (hi - lo);
        f2 = value(x2);
      }
    }
    return sign * std::max(f1, f2);
  };

  for (std::size_t i = 0; i < split.size() && scan.leaves < opt.max_leaves; ++i) {
    const std::size_t j = split.offset + i;
    const Vec p = cocycle.orbit()[j];
    if (fr.offset(p).norm() > opt.radius) continue;
    ++scan.leaves;
    UnstableSegment seg;
    try {
      seg = unstable_segment(f, cocycle.alpha(), p, split.unstable_basis(i), opt.half_width, opt.refine);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::basin_escape) throw;
      ++scan.escaped;
      continue;
    }
    std::vector<double> th(seg.points.size());
    std::vector<bool> inside(seg.points.size());
    for (std::size_t k = 0; k < seg.points.size(); ++k) {
      const Vec d = f.chart.displacement(fr.base, seg.points[k].point);
      th[k] = eta.dot(d);
      inside[k] = d.norm() <= opt.radius;
    }
    bool found = false;
    for (std::size_t k = 1; k + 1 < th.size(); ++k) {
      if (!(inside[k - 1] && inside[k] && inside[k + 1])) continue;
      const double a = th[k] - th[k - 1], b = th[k + 1] - th[k];
      if (a * b < 0.0 || (a == 0.0 && b != 0.0)) {
        scan.thetas.push_back(refine_turning_point(seg, k, a > 0.0 ? 1.0 : -1.0));
        scan.leaf_index.push_back(j);
        found = true;
      }
    }
    if (found) ++scan.leaves_with_fold;
  }
  return scan;
}

}  // namespace linresp
