#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "linresp/error.hpp"
#include "linresp/linalg.hpp"

namespace linresp {

using Params = std::map<std::string, double>;

// ---------------------------------------------------------------------------
// Phase space
// ---------------------------------------------------------------------------

/// Per-coordinate mod-1 wrapping. Coordinates flagged as periodic live in [0,1).
struct Chart {
  int dimension = 2;
  std::array<bool, kMaxDim> wrap{};

  static Chart flat(int d) {
    Chart c;
    c.dimension = d;
    return c;
  }
  static Chart torus(int d) {
    Chart c;
    c.dimension = d;
    for (int i = 0; i < d; ++i) c.wrap[static_cast<std::size_t>(i)] = true;
    return c;
  }

  bool is_torus() const {
    for (int i = 0; i < dimension; ++i)
      if (!wrap[static_cast<std::size_t>(i)]) return false;
    return true;
  }
  bool any_wrap() const {
    for (int i = 0; i < dimension; ++i)
      if (wrap[static_cast<std::size_t>(i)]) return true;
    return false;
  }

  Vec reduce(Vec x) const {
    for (int i = 0; i < dimension; ++i) {
      if (!wrap[static_cast<std::size_t>(i)]) continue;
      double r = x(i) - std::floor(x(i));
      if (r >= 1.0) r = 0.0;
      x(i) = r;
    }
    return x;
  }

  /// Shortest displacement b - a (nearest periodic image on wrapped axes).
  Vec displacement(const Vec& a, const Vec& b) const {
    Vec d = b - a;
    for (int i = 0; i < dimension; ++i)
      if (wrap[static_cast<std::size_t>(i)]) d(i) -= std::round(d(i));
    return d;
  }
};

/// Orbit storage: `size()` consecutive points of one dimension, flat.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(int dimension) : dim_(dimension) {}

  int dimension() const { return dim_; }
  std::size_t size() const { return dim_ ? data_.size() / static_cast<std::size_t>(dim_) : 0; }
  bool empty() const { return data_.empty(); }

  void reserve(std::size_t n) { data_.reserve(n * static_cast<std::size_t>(dim_)); }
  void push_back(const Vec& x) {
    for (int i = 0; i < dim_; ++i) data_.push_back(x(i));
  }

  Vec operator[](std::size_t j) const {
    Vec x(dim_);
    const double* p = data_.data() + j * static_cast<std::size_t>(dim_);
    for (int i = 0; i < dim_; ++i) x(i) = p[i];
    return x;
  }
  double coord(std::size_t j, int i) const {
    return data_[j * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(i)];
  }

  const std::vector<double>& raw() const { return data_; }
  bool operator==(const Trajectory&) const = default;

 private:
  int dim_ = 0;
  std::vector<double> data_;
};

/// Axis-aligned box used for initial densities.
struct Box {
  Vec lo;
  Vec hi;
};

// ---------------------------------------------------------------------------
// Map families
// ---------------------------------------------------------------------------

/// A one-parameter family of diffeomorphisms alpha -> f_alpha.
///
/// `lift` returns the image before chart reduction so that Jacobians and
/// finite differences are unaffected by the mod-1 wrap; `apply` reduces.
struct MapFamily {
  using PointMap = std::function<Vec(double, const Vec&)>;
  using JacobianMap = std::function<Mat(double, const Vec&)>;

  std::string name;
  int dimension = 2;
  Chart chart;
  PointMap lift;
  JacobianMap jacobian;
  PointMap param_derivative;
  PointMap inverse_lift;  // empty when no closed-form inverse exists
  std::function<bool(double)> preserves_volume = [](double) { return false; };
  double default_alpha = 0.0;
  Box default_box;
  double escape_radius = 0.0;  // 0: only non-finite coordinates count as escape
  Params params;

  bool has_inverse() const { return static_cast<bool>(inverse_lift); }

  Vec apply(double alpha, const Vec& x) const { return chart.reduce(lift(alpha, x)); }
  Vec inverse(double alpha, const Vec& y) const {
    if (!inverse_lift) fail(ErrorKind::unsupported, name + ": no inverse available");
    return chart.reduce(inverse_lift(alpha, y));
  }

  bool escaped(const Vec& x) const {
    if (!all_finite(x)) return true;
    return escape_radius > 0.0 && x.norm() > escape_radius;
  }
};

/// orbit[0] = x0, orbit[k+1] = f_alpha(orbit[k]), wrapped each step.
inline Trajectory iterate(const MapFamily& family, double alpha, const Vec& x0, std::size_t n) {
  require(x0.size() == family.dimension, "iterate: x0 dimension mismatch");
  Trajectory orbit(family.dimension);
  orbit.reserve(n + 1);
  Vec x = family.chart.reduce(x0);
  if (family.escaped(x)) fail(ErrorKind::basin_escape, family.name + ": initial point outside domain", 0);
  orbit.push_back(x);
  for (std::size_t k = 1; k <= n; ++k) {
    x = family.apply(alpha, x);
    if (family.escaped(x))
      fail(ErrorKind::basin_escape,
           family.name + ": orbit escaped at step " + std::to_string(k), k);
    orbit.push_back(x);
  }
  return orbit;
}

namespace detail {

inline double param_or(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline void check_params(const std::string& family, const Params& given,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : given) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorKind::config, family + ": unknown parameter '" + key + "'");
  }
}

inline Box unit_box(int d) {
  Box b{Vec::Zero(d), Vec::Ones(d)};
  return b;
}

inline Box centered_box(int d, double half) {
  Box b{Vec::Constant(d, -half), Vec::Constant(d, half)};
  return b;
}

}  // namespace detail

/// Arnold cat map [[2,1],[1,1]] plus alpha * v, on the 2-torus.
inline MapFamily cat_translate_family(const Params& params = {}) {
  detail::check_params("cat_translate", params, {"v1", "v2"});
  const double v1 = detail::param_or(params, "v1", 1.0);
  const double v2 = detail::param_or(params, "v2", 0.5);
  MapFamily f;
  f.name = "cat_translate";
  f.dimension = 2;
  f.chart = Chart::torus(2);
  f.lift = [v1, v2](double a, const Vec& x) {
    return make_vec({2.0 * x(0) + x(1) + a * v1, x(0) + x(1) + a * v2});
  };
  f.jacobian = [](double, const Vec&) {
    Mat j(2, 2);
    j << 2.0, 1.0, 1.0, 1.0;
    return j;
  };
  f.param_derivative = [v1, v2](double, const Vec&) { return make_vec({v1, v2}); };
  f.inverse_lift = [v1, v2](double a, const Vec& y) {
    const double u = y(0) - a * v1, w = y(1) - a * v2;
    return make_vec({u - w, -u + 2.0 * w});
  };
  f.preserves_volume = [](double) { return true; };
  f.default_alpha = 0.0;
  f.default_box = detail::unit_box(2);
  f.params = {{"v1", v1}, {"v2", v2}};
  return f;
}

/// Plain cat map; the parameter is ignored (an alpha-independent family).
inline MapFamily cat_family(const Params& params = {}) {
  detail::check_params("cat", params, {});
  MapFamily f = cat_translate_family({{"v1", 0.0}, {"v2", 0.0}});
  f.name = "cat";
  f.params = {};
  return f;
}

/// Cat map with a trigonometric shear of strength alpha in the first
/// coordinate: (2x + y + alpha sin(2 pi x) / (2 pi), x + y). Anosov for
/// |alpha| < 1; area-preserving only at alpha = 0.
inline MapFamily cat_nonlinear_family(const Params& params = {}) {
  detail::check_params("cat_nonlinear", params, {});
  MapFamily f;
  f.name = "cat_nonlinear";
  f.dimension = 2;
  f.chart = Chart::torus(2);
  f.lift = [](double a, const Vec& x) {
    return make_vec({2.0 * x(0) + x(1) + a * std::sin(kTwoPi * x(0)) / kTwoPi, x(0) + x(1)});
  };
  f.jacobian = [](double a, const Vec& x) {
    Mat j(2, 2);
    j << 2.0 + a * std::cos(kTwoPi * x(0)), 1.0, 1.0, 1.0;
    return j;
  };
  f.param_derivative = [](double, const Vec& x) {
    return make_vec({std::sin(kTwoPi * x(0)) / kTwoPi, 0.0});
  };
  f.inverse_lift = [](double a, const Vec& y) {
    if (std::abs(a) >= 1.0)
      fail(ErrorKind::precondition, "cat_nonlinear: inverse requires |alpha| < 1");
    // x + a sin(2 pi x)/(2 pi) = y0 - y1 is strictly monotone in x.
    const double t = y(0) - y(1);
    double x = t;
    for (int it = 0; it < 100; ++it) {
      const double g = x + a * std::sin(kTwoPi * x) / kTwoPi - t;
      const double dx = g / (1.0 + a * std::cos(kTwoPi * x));
      x -= dx;
      if (std::abs(dx) < 1e-16 * (1.0 + std::abs(x))) break;
    }
    return make_vec({x, y(1) - x});
  };
  f.preserves_volume = [](double a) { return a == 0.0; };
  f.default_alpha = 0.3;
  f.default_box = detail::unit_box(2);
  return f;
}

/// Henon map (1 - a x^2 + y, b x) with alpha = a.
inline MapFamily henon_family(const Params& params = {}) {
  detail::check_params("henon", params, {"b"});
  const double b = detail::param_or(params, "b", 0.3);
  if (b == 0.0) fail(ErrorKind::config, "henon: b must be nonzero");
  MapFamily f;
  f.name = "henon";
  f.dimension = 2;
  f.chart = Chart::flat(2);
  f.lift = [b](double a, const Vec& x) {
    return make_vec({1.0 - a * x(0) * x(0) + x(1), b * x(0)});
  };
  f.jacobian = [b](double a, const Vec& x) {
    Mat j(2, 2);
    j << -2.0 * a * x(0), 1.0, b, 0.0;
    return j;
  };
  f.param_derivative = [](double, const Vec& x) { return make_vec({-x(0) * x(0), 0.0}); };
  f.inverse_lift = [b](double a, const Vec& y) {
    const double x = y(1) / b;
    return make_vec({x, y(0) - 1.0 + a * x * x});
  };
  f.preserves_volume = [b](double) { return std::abs(b) == 1.0; };
  f.default_alpha = 1.4;
  f.default_box = detail::centered_box(2, 0.1);
  f.escape_radius = 100.0;
  f.params = {{"b", b}};
  return f;
}

/// Chirikov standard map on the torus, coordinates (x, p), alpha = K:
/// p' = p + K sin(2 pi x) / (2 pi), x' = x + p'.
inline MapFamily standard_family(const Params& params = {}) {
  detail::check_params("standard", params, {});
  MapFamily f;
  f.name = "standard";
  f.dimension = 2;
  f.chart = Chart::torus(2);
  f.lift = [](double k, const Vec& x) {
    const double p = x(1) + k * std::sin(kTwoPi * x(0)) / kTwoPi;
    return make_vec({x(0) + p, p});
  };
  f.jacobian = [](double k, const Vec& x) {
    const double c = k * std::cos(kTwoPi * x(0));
    Mat j(2, 2);
    j << 1.0 + c, 1.0, c, 1.0;
    return j;
  };
  f.param_derivative = [](double, const Vec& x) {
    const double s = std::sin(kTwoPi * x(0)) / kTwoPi;
    return make_vec({s, s});
  };
  f.inverse_lift = [](double k, const Vec& y) {
    const double x = y(0) - y(1);
    return make_vec({x, y(1) - k * std::sin(kTwoPi * x) / kTwoPi});
  };
  f.preserves_volume = [](double) { return true; };
  f.default_alpha = 6.0;
  f.default_box = detail::unit_box(2);
  return f;
}

/// Two Henon maps coupled diffusively inside the quadratic term:
/// u_i = (1 - c) x_i + c x_j, x_i' = 1 - a u_i^2 + y_i, y_i' = b x_i; alpha = a.
inline MapFamily coupled_henon_family(const Params& params = {}) {
  detail::check_params("coupled_henon", params, {"b", "coupling"});
  const double b = detail::param_or(params, "b", 0.3);
  const double c = detail::param_or(params, "coupling", 0.05);
  if (b == 0.0) fail(ErrorKind::config, "coupled_henon: b must be nonzero");
  MapFamily f;
  f.name = "coupled_henon";
  f.dimension = 4;
  f.chart = Chart::flat(4);
  const auto mix = [c](const Vec& x, int i, int j) { return (1.0 - c) * x(i) + c * x(j); };
  f.lift = [b, mix](double a, const Vec& x) {
    const double u0 = mix(x, 0, 2), u2 = mix(x, 2, 0);
    return make_vec({1.0 - a * u0 * u0 + x(1), b * x(0), 1.0 - a * u2 * u2 + x(3), b * x(2)});
  };
  f.jacobian = [b, c, mix](double a, const Vec& x) {
    const double u0 = mix(x, 0, 2), u2 = mix(x, 2, 0);
    Mat j = Mat::Zero(4, 4);
    j(0, 0) = -2.0 * a * u0 * (1.0 - c);
    j(0, 1) = 1.0;
    j(0, 2) = -2.0 * a * u0 * c;
    j(1, 0) = b;
    j(2, 2) = -2.0 * a * u2 * (1.0 - c);
    j(2, 3) = 1.0;
    j(2, 0) = -2.0 * a * u2 * c;
    j(3, 2) = b;
    return j;
  };
  f.param_derivative = [mix](double, const Vec& x) {
    const double u0 = mix(x, 0, 2), u2 = mix(x, 2, 0);
    return make_vec({-u0 * u0, 0.0, -u2 * u2, 0.0});
  };
  f.inverse_lift = [b, mix](double a, const Vec& y) {
    Vec x(4);
    x(0) = y(1) / b;
    x(2) = y(3) / b;
    const double u0 = mix(x, 0, 2), u2 = mix(x, 2, 0);
    x(1) = y(0) - 1.0 + a * u0 * u0;
    x(3) = y(2) - 1.0 + a * u2 * u2;
    return x;
  };
  f.default_alpha = 1.4;
  f.default_box = detail::centered_box(4, 0.1);
  f.escape_radius = 100.0;
  f.params = {{"b", b}, {"coupling", c}};
  return f;
}

inline std::vector<std::string> builtin_names() {
  return {"cat", "cat_translate", "cat_nonlinear", "henon", "standard", "coupled_henon"};
}

inline MapFamily make_family(const std::string& name, const Params& params = {}) {
  if (name == "cat") return cat_family(params);
  if (name == "cat_translate") return cat_translate_family(params);
  if (name == "cat_nonlinear") return cat_nonlinear_family(params);
  if (name == "henon") return henon_family(params);
  if (name == "standard") return standard_family(params);
  if (name == "coupled_henon") return coupled_henon_family(params);
  fail(ErrorKind::config, "unknown system '" + name + "'");
}

inline std::vector<MapFamily> builtin_catalog() {
  std::vector<MapFamily> out;
  for (const auto& n : builtin_names()) out.push_back(make_family(n));
  return out;
}

/// Central-difference Jacobian of the lifted map.
inline Mat finite_difference_jacobian(const MapFamily& f, double alpha, const Vec& x,
                                      double step = 1e-6) {
  const int d = f.dimension;
  Mat j(d, d);
  for (int k = 0; k < d; ++k) {
    Vec xp = x, xm = x;
    xp(k) += step;
    xm(k) -= step;
    j.col(k) = (f.lift(alpha, xp) - f.lift(alpha, xm)) / (2.0 * step);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

struct Observable {
  std::string name;
  std::function<double(const Vec&)> eval;
  std::function<Vec(const Vec&)> gradient;

  double operator()(const Vec& x) const { return eval(x); }
};

inline Observable constant_observable(int d, double c) {
  return {"const:" + std::to_string(c), [c](const Vec&) { return c; },
          [d](const Vec&) { return Vec(Vec::Zero(d)); }};
}

/// cos(2 pi k.x)
inline Observable cosine_observable(const Vec& k) {
  std::ostringstream n;
  n << "cos:";
  for (Eigen::Index i = 0; i < k.size(); ++i) n << (i ? "," : "") << k(i);
  return {n.str(), [k](const Vec& x) { return std::cos(kTwoPi * k.dot(x)); },
          [k](const Vec& x) { return Vec(-kTwoPi * std::sin(kTwoPi * k.dot(x)) * k); }};
}

/// sin(2 pi k.x)
inline Observable sine_observable(const Vec& k) {
  std::ostringstream n;
  n << "sin:";
  for (Eigen::Index i = 0; i < k.size(); ++i) n << (i ? "," : "") << k(i);
  return {n.str(), [k](const Vec& x) { return std::sin(kTwoPi * k.dot(x)); },
          [k](const Vec& x) { return Vec(kTwoPi * std::cos(kTwoPi * k.dot(x)) * k); }};
}

inline Observable coordinate_observable(int d, int i) {
  return {"coord:" + std::to_string(i), [i](const Vec& x) { return x(i); },
          [d, i](const Vec&) {
            Vec g = Vec::Zero(d);
            g(i) = 1.0;
            return g;
          }};
}

inline Observable product_observable(int d, int i, int j) {
  return {"product:" + std::to_string(i) + "," + std::to_string(j),
          [i, j](const Vec& x) { return x(i) * x(j); },
          [d, i, j](const Vec& x) {
            Vec g = Vec::Zero(d);
            g(i) += x(j);
            g(j) += x(i);
            return g;
          }};
}

/// Smooth bump around `center`. On wrapped axes it is the periodic
/// exp(kappa * (cos 2 pi (x - c) - 1)); on flat axes a Gaussian of width 1/sqrt(kappa).
inline Observable bump_observable(const Chart& chart, const Vec& center, double kappa) {
  auto value = [chart, center, kappa](const Vec& x) {
    double e = 0.0;
    for (int i = 0; i < chart.dimension; ++i) {
      const double u = x(i) - center(i);
      e += chart.wrap[static_cast<std::size_t>(i)] ? std::cos(kTwoPi * u) - 1.0
                                                   : -0.5 * u * u;
    }
    return e;
  };
  auto eval = [value, kappa](const Vec& x) { return std::exp(kappa * value(x)); };
  auto grad = [value, kappa, chart, center](const Vec& x) {
    const double v = std::exp(kappa * value(x));
    Vec g(chart.dimension);
    for (int i = 0; i < chart.dimension; ++i) {
      const double u = x(i) - center(i);
      g(i) = chart.wrap[static_cast<std::size_t>(i)] ? -kappa * kTwoPi * std::sin(kTwoPi * u) * v
                                                     : -kappa * u * v;
    }
    return g;
  };
  return {"bump", eval, grad};
}

namespace detail {

inline std::vector<double> parse_numbers(std::string_view text) {
  std::vector<double> out;
  std::string token;
  std::istringstream in{std::string(text)};
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      fail(ErrorKind::config, "cannot parse number '" + token + "'");
    }
  }
  return out;
}

inline Vec to_vec(const std::vector<double>& v, int d, const std::string& what) {
  if (static_cast<int>(v.size()) != d)
    fail(ErrorKind::config, what + ": expected " + std::to_string(d) + " components");
  Vec out(d);
  for (int i = 0; i < d; ++i) out(i) = v[static_cast<std::size_t>(i)];
  return out;
}

inline int to_index(double v, int d, const std::string& what) {
  const int i = static_cast<int>(v);
  if (i != v || i < 0 || i >= d) fail(ErrorKind::config, what + ": bad coordinate index");
  return i;
}

}  // namespace detail

/// Parses "cos:k1,k2", "sin:k1,k2", "coord:i", "product:i,j", "const:c",
/// "bump:kappa:c1,c2".
inline Observable parse_observable(const std::string& spec, const Chart& chart) {
  const int d = chart.dimension;
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  Observable obs;
  if (kind == "cos") {
    obs = cosine_observable(detail::to_vec(detail::parse_numbers(rest), d, spec));
  } else if (kind == "sin") {
    obs = sine_observable(detail::to_vec(detail::parse_numbers(rest), d, spec));
  } else if (kind == "coord") {
    const auto v = detail::parse_numbers(rest);
    if (v.size() != 1) fail(ErrorKind::config, spec + ": expected one index");
    obs = coordinate_observable(d, detail::to_index(v[0], d, spec));
  } else if (kind == "product") {
    const auto v = detail::parse_numbers(rest);
    if (v.size() != 2) fail(ErrorKind::config, spec + ": expected two indices");
    obs = product_observable(d, detail::to_index(v[0], d, spec), detail::to_index(v[1], d, spec));
  } else if (kind == "const") {
    const auto v = detail::parse_numbers(rest);
    if (v.size() != 1) fail(ErrorKind::config, spec + ": expected one value");
    obs = constant_observable(d, v[0]);
  } else if (kind == "bump") {
    const auto second = rest.find(':');
    if (second == std::string::npos) fail(ErrorKind::config, spec + ": expected bump:kappa:center");
    const auto k = detail::parse_numbers(rest.substr(0, second));
    if (k.size() != 1 || k[0] <= 0) fail(ErrorKind::config, spec + ": bad kappa");
    obs = bump_observable(chart, detail::to_vec(detail::parse_numbers(rest.substr(second + 1)), d, spec), k[0]);
  } else {
    fail(ErrorKind::config, "unknown observable '" + spec + "'");
  }
  obs.name = spec;
  return obs;
}

/// Trigonometric modes, coordinate projections, a product, a bump and a constant.
inline std::vector<Observable> observable_catalog(const Chart& chart) {
  const int d = chart.dimension;
  require(d >= 2, "observable_catalog: dimension must be at least 2");
  std::vector<Observable> out;
  out.push_back(constant_observable(d, 1.0));
  for (int i = 0; i < d; ++i) {
    Vec k = Vec::Zero(d);
    k(i) = 1.0;
    out.push_back(cosine_observable(k));
    out.push_back(coordinate_observable(d, i));
  }
  out.push_back(sine_observable(Vec::Ones(d)));
  out.push_back(product_observable(d, 0, 1));
  out.push_back(bump_observable(chart, Vec::Constant(d, chart.is_torus() ? 0.5 : 0.0), 4.0));
  return out;
}

inline std::vector<Observable> observable_catalog(int dimension) {
  return observable_catalog(Chart::torus(dimension));
}

// ---------------------------------------------------------------------------
// Perturbation field X
// ---------------------------------------------------------------------------

/// The vector field X with X(f x) = d f_alpha(x) / d alpha.
///
/// `along_orbit(x_prev)` returns X at f(x_prev); `closed_form(y)` returns X(y)
/// directly when available. `divergence` is optional and analytic.
struct PerturbationField {
  std::string name;
  int dimension = 2;
  std::function<Vec(const Vec&)> along_orbit;
  std::function<Vec(const Vec&)> closed_form;
  std::function<double(const Vec&)> divergence;

  /// X at `current`, given its predecessor on the orbit.
  Vec at(const Vec& previous, const Vec& current) const {
    if (along_orbit) return along_orbit(previous);
    return closed_form(current);
  }
  bool has_closed_form() const { return static_cast<bool>(closed_form); }
};

inline PerturbationField family_perturbation(const MapFamily& f, double alpha) {
  PerturbationField x;
  x.name = "family";
  x.dimension = f.dimension;
  auto deriv = f.param_derivative;
  x.along_orbit = [deriv, alpha](const Vec& prev) { return deriv(alpha, prev); };
  if (f.has_inverse()) {
    auto inv = f.inverse_lift;
    x.closed_form = [deriv, inv, alpha](const Vec& y) { return deriv(alpha, inv(alpha, y)); };
  }
  return x;
}

inline PerturbationField zero_field(int d) {
  return {"zero", d, nullptr, [d](const Vec&) { return Vec(Vec::Zero(d)); },
          [](const Vec&) { return 0.0; }};
}

inline PerturbationField constant_field(const Vec& v) {
  return {"const", static_cast<int>(v.size()), nullptr, [v](const Vec&) { return v; },
          [](const Vec&) { return 0.0; }};
}

/// X_i(x) = sin(2 pi x_j); divergence 2 pi cos(2 pi x_i) when i == j.
inline PerturbationField sine_field(int d, int i, int j) {
  PerturbationField x;
  x.name = "sin:" + std::to_string(i) + "," + std::to_string(j);
  x.dimension = d;
  x.closed_form = [d, i, j](const Vec& y) {
    Vec v = Vec::Zero(d);
    v(i) = std::sin(kTwoPi * y(j));
    return v;
  };
  x.divergence = [i, j](const Vec& y) { return i == j ? kTwoPi * std::cos(kTwoPi * y(i)) : 0.0; };
  return x;
}

/// a * X1 + b * X2 (closed forms only).
inline PerturbationField combine(double a, const PerturbationField& x1, double b,
                                 const PerturbationField& x2) {
  require(x1.has_closed_form() && x2.has_closed_form(), "combine: closed forms required");
  PerturbationField x;
  x.name = "combination";
  x.dimension = x1.dimension;
  auto f1 = x1.closed_form, f2 = x2.closed_form;
  x.closed_form = [=](const Vec& y) { return Vec(a * f1(y) + b * f2(y)); };
  if (x1.divergence && x2.divergence) {
    auto d1 = x1.divergence, d2 = x2.divergence;
    x.divergence = [=](const Vec& y) { return a * d1(y) + b * d2(y); };
  }
  return x;
}

/// div X at y: analytic when provided, otherwise central differences of the
/// closed form with step `h`.
inline double divergence_at(const PerturbationField& x, const Vec& y, double h = 1e-5) {
  if (x.divergence) return x.divergence(y);
  if (!x.closed_form) fail(ErrorKind::unsupported, "divergence needs a closed-form field");
  double div = 0.0;
  for (int k = 0; k < x.dimension; ++k) {
    Vec yp = y, ym = y;
    yp(k) += h;
    ym(k) -= h;
    div += (x.closed_form(yp)(k) - x.closed_form(ym)(k)) / (2.0 * h);
  }
  return div;
}

/// "family", "zero", "const:v1,v2", "sin:i,j".
inline PerturbationField parse_perturbation(const std::string& spec, const MapFamily& f,
                                            double alpha) {
  const int d = f.dimension;
  if (spec == "family") return family_perturbation(f, alpha);
  if (spec == "zero") return zero_field(d);
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "const") {
    auto x = constant_field(detail::to_vec(detail::parse_numbers(rest), d, spec));
    x.name = spec;
    return x;
  }
  if (kind == "sin") {
    const auto v = detail::parse_numbers(rest);
    if (v.size() != 2) fail(ErrorKind::config, spec + ": expected two indices");
    return sine_field(d, detail::to_index(v[0], d, spec), detail::to_index(v[1], d, spec));
  }
  fail(ErrorKind::config, "unknown perturbation '" + spec + "'");
}

}  // namespace linresp
