#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linresp/error.hpp"
#include "linresp/linalg.hpp"
#include "linresp/maps.hpp"
#include "linresp/stats.hpp"

namespace linresp {

/// Tangent maps T_{x_j} f along a stored orbit. Holds references: the family
/// and orbit must outlive the cocycle.
class TangentCocycle {
 public:
  TangentCocycle(const MapFamily& family, double alpha, const Trajectory& orbit)
      : family_(&family), alpha_(alpha), orbit_(&orbit) {
    require(orbit.dimension() == family.dimension, "TangentCocycle: dimension mismatch");
  }

  const MapFamily& family() const { return *family_; }
  double alpha() const { return alpha_; }
  const Trajectory& orbit() const { return *orbit_; }
  int dimension() const { return family_->dimension; }
  /// Number of tangent maps available (points - 1).
  std::size_t steps() const { return orbit_->size() ? orbit_->size() - 1 : 0; }

  Mat jacobian(std::size_t j) const { return family_->jacobian(alpha_, (*orbit_)[j]); }

  /// T_{x_start} f^n = J_{start+n-1} ... J_start.
  Mat product(std::size_t start, std::size_t n) const {
    require(start + n <= steps(), "TangentCocycle::product: range exceeds orbit");
    Mat p = Mat::Identity(dimension(), dimension());
    for (std::size_t k = 0; k < n; ++k) p = jacobian(start + k) * p;
    return p;
  }

 private:
  const MapFamily* family_;
  double alpha_;
  const Trajectory* orbit_;
};

// ---------------------------------------------------------------------------
// Lyapunov spectrum
// ---------------------------------------------------------------------------

struct LyapunovSpectrum {
  /// One entry per tangent direction, descending (nats per iteration).
  std::vector<double> exponents;
  std::vector<double> std_errors;
  /// Distinct exponent levels and their multiplicities (sum to d).
  std::vector<double> levels;
  std::vector<int> multiplicities;
  /// Time average of ln|det Df| over the same steps.
  double mean_log_det = 0.0;
  std::size_t steps = 0;
  /// Per-batch exponent estimates [batch][direction].
  std::vector<std::vector<double>> batch_exponents;

  double sum() const { return std::accumulate(exponents.begin(), exponents.end(), 0.0); }
  int positive_count() const {
    return static_cast<int>(std::count_if(exponents.begin(), exponents.end(),
                                          [](double l) { return l > 0.0; }));
  }
};

inline constexpr double kZeroExponentFloor = 1e-4;

/// Throws a hyperbolicity error if any exponent lies within
/// max(10 * stderr, floor) of zero.
inline void check_hyperbolic(const LyapunovSpectrum& s, double floor = kZeroExponentFloor) {
  for (std::size_t i = 0; i < s.exponents.size(); ++i) {
    const double eps0 = std::max(10.0 * s.std_errors[i], floor);
    if (std::abs(s.exponents[i]) < eps0)
      fail(ErrorKind::hyperbolicity,
           "exponent " + std::to_string(i) + " = " + std::to_string(s.exponents[i]) +
               " is indistinguishable from zero (threshold " + std::to_string(eps0) + ")");
  }
}

namespace detail {

inline void group_levels(LyapunovSpectrum& s) {
  s.levels.clear();
  s.multiplicities.clear();
  for (std::size_t i = 0; i < s.exponents.size(); ++i) {
    if (!s.levels.empty()) {
      const std::size_t prev = i - 1;
      const double tol = std::max(1e-9, 3.0 * std::hypot(s.std_errors[i], s.std_errors[prev]));
      if (std::abs(s.exponents[i] - s.exponents[prev]) <= tol) {
        ++s.multiplicities.back();
        // level = multiplicity-weighted mean of the grouped exponents
        const int m = s.multiplicities.back();
        s.levels.back() += (s.exponents[i] - s.levels.back()) / m;
        continue;
      }
    }
    s.levels.push_back(s.exponents[i]);
    s.multiplicities.push_back(1);
  }
}

inline void check_qr_diag(const Vec& diag, std::size_t step) {
  for (Eigen::Index i = 0; i < diag.size(); ++i)
    if (!(diag(i) > 0.0) || !std::isfinite(diag(i)))
      fail(ErrorKind::numerical_degeneracy,
           "tangent frame lost rank at step " + std::to_string(step), step);
}

/// QR of `m` in place (m becomes Q); returns the upper-triangular factor.
inline Mat qr_in_place(Mat& m) {
  const Eigen::Index n = m.cols();
  Mat r = Mat::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < k; ++i) {
        const double c = m.col(i).dot(m.col(k));
        r(i, k) += c;
        m.col(k) -= c * m.col(i);
      }
    }
    const double norm = m.col(k).norm();
    r(k, k) = norm;
    if (norm > 0.0 && std::isfinite(norm)) m.col(k) /= norm;
  }
  return r;
}

}  // namespace detail

/// Benettin/QR estimate of the full spectrum over the first `steps` tangent
/// maps of the cocycle. The orbit is assumed to be on the attractor already.
inline LyapunovSpectrum benettin_spectrum(const TangentCocycle& cocycle, std::size_t steps,
                                          std::size_t reorth_interval = 1,
                                          std::optional<Mat> initial_frame = std::nullopt,
                                          int batches = kDefaultBatches) {
  require(steps >= 1 && steps <= cocycle.steps(), "benettin_spectrum: steps out of range");
  require(reorth_interval >= 1, "benettin_spectrum: reorth_interval must be >= 1");
  const int d = cocycle.dimension();
  Mat q = initial_frame ? *initial_frame : Mat(Mat::Identity(d, d));
  require(q.rows() == d && q.cols() == d, "benettin_spectrum: frame must be d x d");
  detail::check_qr_diag(gram_schmidt(q), 0);

  const std::size_t nb = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(batches), steps));
  std::vector<std::vector<double>> batch_logs(nb, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<std::size_t> batch_len(nb, 0);
  std::vector<double> total(static_cast<std::size_t>(d), 0.0);
  double log_det = 0.0;

  std::size_t pending_batch = 0;
  for (std::size_t j = 0; j < steps; ++j) {
    const Mat jac = cocycle.jacobian(j);
    q = jac * q;
    log_det += std::log(std::abs(jac.determinant()));
    const std::size_t b = batch_of(j, steps, nb);
    ++batch_len[b];
    if ((j + 1) % reorth_interval == 0 || j + 1 == steps) {
      const Vec diag = gram_schmidt(q);
      detail::check_qr_diag(diag, j);
      pending_batch = b;
      for (int i = 0; i < d; ++i) {
        const double l = std::log(diag(i));
        total[static_cast<std::size_t>(i)] += l;
        batch_logs[pending_batch][static_cast<std::size_t>(i)] += l;
      }
    }
  }

  LyapunovSpectrum s;
  s.steps = steps;
  s.mean_log_det = log_det / static_cast<double>(steps);
  s.batch_exponents.assign(nb, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (std::size_t b = 0; b < nb; ++b)
    for (int i = 0; i < d; ++i)
      s.batch_exponents[b][static_cast<std::size_t>(i)] =
          batch_len[b] ? batch_logs[b][static_cast<std::size_t>(i)] / static_cast<double>(batch_len[b]) : 0.0;

  std::vector<std::size_t> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> raw(static_cast<std::size_t>(d)), err(static_cast<std::size_t>(d));
  std::vector<double> column(nb);
  for (int i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    raw[ui] = total[ui] / static_cast<double>(steps);
    for (std::size_t b = 0; b < nb; ++b) column[b] = s.batch_exponents[b][ui];
    err[ui] = reorth_interval < steps / nb ? spread_error(column) : 0.0;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });
  for (auto i : order) {
    s.exponents.push_back(raw[i]);
    s.std_errors.push_back(err[i]);
  }
  detail::group_levels(s);
  return s;
}

// ---------------------------------------------------------------------------
// Covariant Lyapunov vectors (Ginelli forward/backward sweep)
// ---------------------------------------------------------------------------

struct OseledetsSplitting {
  /// Orbit index of the first stored point.
  std::size_t offset = 0;
  int dimension = 0;
  int unstable_dim = 0;
  LyapunovSpectrum spectrum;
  /// Per point: unit CLVs as columns, in descending-exponent order.
  std::vector<Mat> clvs;

  std::size_t size() const { return clvs.size(); }
  int stable_dim() const { return dimension - unstable_dim; }

  Mat unstable_basis(std::size_t i) const {
    Mat b = clvs[i].leftCols(unstable_dim);
    gram_schmidt(b);
    return b;
  }
  Mat stable_basis(std::size_t i) const {
    Mat b = clvs[i].rightCols(stable_dim());
    gram_schmidt(b);
    return b;
  }
  /// Unit vector orthogonal to E^s inside span(E^s, e_u); requires dim E^u = 1.
  Vec stable_normal(std::size_t i) const {
    if (unstable_dim != 1) fail(ErrorKind::unsupported, "stable_normal needs dim E^u = 1");
    const Mat bs = stable_basis(i);
    Vec eu = clvs[i].col(0);
    Vec n = eu - bs * (bs.transpose() * eu);
    return n / n.norm();
  }
};

struct ClvDiagnostics {
  double max_unstable_residual = 0.0;
  double max_stable_residual = 0.0;
  double mean_unstable_residual = 0.0;
  double mean_stable_residual = 0.0;
};

/// CLVs at orbit points [warmup, warmup + steps). The cocycle needs at least
/// 2 * warmup + steps tangent maps; the first and last `warmup` are discarded.
inline OseledetsSplitting compute_clvs(const TangentCocycle& cocycle, std::size_t steps,
                                       std::size_t warmup = 1000,
                                       double zero_floor = kZeroExponentFloor) {
  require(steps >= 1, "compute_clvs: steps must be positive");
  const std::size_t total = 2 * warmup + steps;
  if (total > cocycle.steps())
    fail(ErrorKind::insufficient_data,
         "compute_clvs: orbit too short (need " + std::to_string(total + 1) + " points)");
  const int d = cocycle.dimension();

  std::vector<Mat> qs;  // Q at points warmup .. warmup+steps-1
  std::vector<Mat> rs;  // R_{j+1} for j = warmup .. total-1
  qs.reserve(steps);
  rs.reserve(steps + warmup);
  const std::size_t nb = std::max<std::size_t>(1, std::min<std::size_t>(kDefaultBatches, steps));
  std::vector<std::vector<double>> batch_logs(nb, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<std::size_t> batch_len(nb, 0);
  double log_det = 0.0;

  Mat q = Mat::Identity(d, d);
  for (std::size_t j = 0; j < total; ++j) {
    if (j >= warmup && j < warmup + steps) qs.push_back(q);
    const Mat jac = cocycle.jacobian(j);
    q = jac * q;
    Mat r = detail::qr_in_place(q);
    detail::check_qr_diag(r.diagonal(), j);
    if (j >= warmup) rs.push_back(r);
    if (j >= warmup && j < warmup + steps) {
      const std::size_t b = batch_of(j - warmup, steps, nb);
      ++batch_len[b];
      log_det += std::log(std::abs(jac.determinant()));
      for (int i = 0; i < d; ++i) batch_logs[b][static_cast<std::size_t>(i)] += std::log(r(i, i));
    }
  }

  OseledetsSplitting out;
  out.offset = warmup;
  out.dimension = d;
  LyapunovSpectrum& s = out.spectrum;
  s.steps = steps;
  s.mean_log_det = log_det / static_cast<double>(steps);
  s.batch_exponents.assign(nb, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<double> column(nb);
  for (int i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    double sum = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      sum += batch_logs[b][ui];
      s.batch_exponents[b][ui] = batch_len[b] ? batch_logs[b][ui] / static_cast<double>(batch_len[b]) : 0.0;
      column[b] = s.batch_exponents[b][ui];
    }
    s.exponents.push_back(sum / static_cast<double>(steps));
    s.std_errors.push_back(spread_error(column));
  }
  detail::group_levels(s);
  check_hyperbolic(s, zero_floor);
  out.unstable_dim = s.positive_count();

  // Backward sweep: C_j = R_{j+1}^{-1} C_{j+1}, columns renormalized.
  out.clvs.resize(steps);
  Mat c = Mat::Identity(d, d);
  for (std::size_t j = total; j-- > warmup;) {
    const Mat& r = rs[j - warmup];
    c = r.triangularView<Eigen::Upper>().solve(c);
    for (int k = 0; k < d; ++k) c.col(k) /= c.col(k).norm();
    if (j < warmup + steps) {
      Mat v = qs[j - warmup] * c;
      for (int k = 0; k < d; ++k) v.col(k) /= v.col(k).norm();
      out.clvs[j - warmup] = v;
    }
  }
  return out;
}

/// Residual of one-step covariance: || w - P_{E(x_{j+1})} w || / ||w|| for
/// w = Df(x_j) v over CLVs v, with E the matching unstable or stable subspace.
inline ClvDiagnostics clv_covariance(const TangentCocycle& cocycle, const OseledetsSplitting& split) {
  ClvDiagnostics diag;
  if (split.size() < 2) return diag;
  std::size_t nu = 0, ns = 0;
  for (std::size_t i = 0; i + 1 < split.size(); ++i) {
    const Mat jac = cocycle.jacobian(split.offset + i);
    const Mat bu = split.unstable_basis(i + 1);
    const Mat bs = split.stable_basis(i + 1);
    for (int k = 0; k < split.dimension; ++k) {
      const Vec w = jac * split.clvs[i].col(k);
      const bool unstable = k < split.unstable_dim;
      const Mat& b = unstable ? bu : bs;
      const double res = (w - b * (b.transpose() * w)).norm() / w.norm();
      if (unstable) {
        diag.max_unstable_residual = std::max(diag.max_unstable_residual, res);
        diag.mean_unstable_residual += res;
        ++nu;
      } else {
        diag.max_stable_residual = std::max(diag.max_stable_residual, res);
        diag.mean_stable_residual += res;
        ++ns;
      }
    }
  }
  if (nu) diag.mean_unstable_residual /= static_cast<double>(nu);
  if (ns) diag.mean_stable_residual /= static_cast<double>(ns);
  return diag;
}

// ---------------------------------------------------------------------------
// Principal angles
// ---------------------------------------------------------------------------

/// Minimal principal angle between span(a) and span(b), both orthonormal.
inline double min_principal_angle(const Mat& a, const Mat& b) {
  if (a.cols() == 0 || b.cols() == 0) return kTwoPi / 4.0;
  const Mat& small = a.cols() <= b.cols() ? a : b;
  const Mat& large = a.cols() <= b.cols() ? b : a;
  const Mat cross = small.transpose() * large;
  Eigen::JacobiSVD<Mat> cos_svd(cross);
  const double cmax = std::min(1.0, cos_svd.singularValues()(0));
  const Mat rest = small - large * cross.transpose();
  Eigen::JacobiSVD<Mat> sin_svd(rest);
  const double smin = sin_svd.singularValues()(sin_svd.singularValues().size() - 1);
  return std::clamp(std::atan2(smin, cmax), 0.0, kTwoPi / 4.0);
}

struct AngleSeries {
  std::size_t offset = 0;
  std::vector<double> angles;

  double min() const { return *std::min_element(angles.begin(), angles.end()); }
};

inline AngleSeries splitting_angles(const OseledetsSplitting& split) {
  AngleSeries out;
  out.offset = split.offset;
  out.angles.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i)
    out.angles.push_back(min_principal_angle(split.unstable_basis(i), split.stable_basis(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Local unstable manifolds
// ---------------------------------------------------------------------------

/// A point of a pushed-forward seed segment: `point` = f^m(seed + u e),
/// `tangent` = d point / du, `preimage` = f^{m-1}(seed + u e). Lifted
/// coordinates (no chart reduction) so the curve stays continuous.
struct CurvePoint {
  double u = 0.0;
  Vec point;
  Vec tangent;
  Vec preimage;
};

inline CurvePoint push_seed(const MapFamily& f, double alpha, const Vec& seed, const Vec& dir,
                            std::size_t steps, double u) {
  CurvePoint c;
  c.u = u;
  Vec y = seed + u * dir;
  Vec t = dir;
  Vec prev = y;
  for (std::size_t k = 0; k < steps; ++k) {
    prev = y;
    t = f.jacobian(alpha, y) * t;
    y = f.lift(alpha, y);
    if (!all_finite(y) || !all_finite(t))
      fail(ErrorKind::basin_escape, f.name + ": unstable segment left the domain", k);
  }
  c.point = y;
  c.tangent = t;
  c.preimage = prev;
  return c;
}

struct UnstableSegment {
  std::vector<CurvePoint> points;  // ordered by u
  std::size_t center = 0;          // index of u = 0
  double max_spacing = 0.0;
  // point(u) = push_seed(f, alpha, seed, direction, steps, u).point - shift
  Vec seed;
  Vec direction;
  std::size_t steps = 0;
  Vec shift;

  std::vector<Vec> polyline() const {
    std::vector<Vec> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.point);
    return out;
  }
};

/// Pushes the segment {seed + u dir : |u| <= half_width / |T f^m dir|} forward
/// `steps` times and resamples until consecutive points are at most
/// `max_spacing` apart. `target`, when given, fixes the periodic image so the
/// center coincides with it.
inline UnstableSegment unstable_segment_from_seed(const MapFamily& f, double alpha, const Vec& seed,
                                                  const Vec& dir, std::size_t steps, double half_width,
                                                  double max_spacing, std::optional<Vec> target = std::nullopt,
                                                  std::size_t max_points = 4097) {
  require(half_width > 0.0, "unstable_segment: half_width must be positive (degenerate segment)");
  require(max_spacing > 0.0, "unstable_segment: max_spacing must be positive");
  const Vec unit = dir / dir.norm();
  const CurvePoint center = push_seed(f, alpha, seed, unit, steps, 0.0);
  const double stretch = center.tangent.norm();
  const double half_u = half_width / stretch;

  constexpr int kInitial = 8;
  std::vector<CurvePoint> pts;
  for (int i = -kInitial; i <= kInitial; ++i)
    pts.push_back(i == 0 ? center : push_seed(f, alpha, seed, unit, steps, half_u * i / kInitial));

  bool refined = true;
  while (refined && pts.size() < max_points) {
    refined = false;
    std::vector<CurvePoint> next;
    next.reserve(pts.size() * 2);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      next.push_back(pts[i]);
      if ((pts[i + 1].point - pts[i].point).norm() > max_spacing &&
          next.size() + (pts.size() - i) < max_points) {
        next.push_back(push_seed(f, alpha, seed, unit, steps, 0.5 * (pts[i].u + pts[i + 1].u)));
        refined = true;
      }
    }
    next.push_back(pts.back());
    pts.swap(next);
  }

  UnstableSegment seg;
  seg.max_spacing = max_spacing;
  seg.seed = seed;
  seg.direction = unit;
  seg.steps = steps;
  seg.shift = Vec::Zero(seed.size());
  if (target && f.chart.any_wrap()) {
    seg.shift = center.point - f.chart.reduce(center.point) +
                f.chart.displacement(*target, f.chart.reduce(center.point));
    for (auto& p : pts) p.point -= seg.shift;
  }
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].u == 0.0) seg.center = i;
  seg.points = std::move(pts);
  return seg;
}

/// Local unstable manifold through x from its unstable direction. The seed
/// lies `refine` steps in the past (via the inverse map) with its direction
/// pulled back along the inverse tangent maps; pushing forward then converges
/// onto the unstable manifold.
inline UnstableSegment unstable_segment(const MapFamily& f, double alpha, const Vec& x,
                                        const Mat& unstable_basis, double half_width,
                                        std::size_t refine = 12, double max_spacing = 0.0) {
  if (unstable_basis.cols() != 1)
    fail(ErrorKind::unsupported, "unstable_segment: unstable dimension must be 1");
  require(half_width > 0.0, "unstable_segment: half_width must be positive (degenerate segment)");
  require(refine >= 1, "unstable_segment: refine must be >= 1");
  if (!f.has_inverse()) fail(ErrorKind::unsupported, f.name + ": unstable_segment needs an inverse");
  Vec y = x;
  Vec e = unstable_basis.col(0);
  for (std::size_t k = 0; k < refine; ++k) {
    const Vec prev = f.inverse_lift(alpha, y);
    e = f.jacobian(alpha, prev).partialPivLu().solve(e);
    e /= e.norm();
    y = prev;
  }
  if (max_spacing <= 0.0) max_spacing = half_width / 8.0;
  UnstableSegment seg = unstable_segment_from_seed(f, alpha, y, e, refine, half_width, max_spacing, x);
  const auto& c = seg.points[seg.center];
  if (c.tangent.dot(unstable_basis.col(0)) < 0.0) {
    std::reverse(seg.points.begin(), seg.points.end());
    seg.center = seg.points.size() - 1 - seg.center;
  }
  return seg;
}

inline UnstableSegment unstable_segment(const MapFamily& f, double alpha, const Vec& x, const Vec& e_u,
                                        double half_width, std::size_t refine = 12) {
  Mat b(e_u.size(), 1);
  b.col(0) = e_u / e_u.norm();
  return unstable_segment(f, alpha, x, b, half_width, refine);
}

/// Discrete curvature at interior polyline vertices (turning angle / mean edge).
inline std::vector<double> polyline_curvature(const std::vector<Vec>& pts) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const Vec a = pts[i] - pts[i - 1], b = pts[i + 1] - pts[i];
    const double la = a.norm(), lb = b.norm();
    const double c = std::clamp(a.dot(b) / (la * lb), -1.0, 1.0);
    out.push_back(std::acos(c) / (0.5 * (la + lb)));
  }
  return out;
}

}  // namespace linresp
