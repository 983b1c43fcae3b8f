#include <catch_amalgamated.hpp>

#include <cmath>

#include "linresp/maps.hpp"
#include "linresp/random.hpp"

using namespace linresp;
using Catch::Approx;

namespace {

Vec random_point(const MapFamily& f, Rng& rng) {
  Vec x(f.dimension);
  for (int i = 0; i < f.dimension; ++i)
    x(i) = f.chart.wrap[static_cast<std::size_t>(i)] ? rng.uniform() : rng.uniform(-0.8, 0.8);
  return x;
}

Vec fd_gradient(const Observable& obs, const Vec& x, double h = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (obs.eval(xp) - obs.eval(xm)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("cat map orbits", "[maps]") {
  const auto cat = cat_family();
  const auto fixed = iterate(cat, 0.0, make_vec({0.0, 0.0}), 5);
  REQUIRE(fixed.size() == 6);
  for (std::size_t k = 0; k < fixed.size(); ++k) REQUIRE(fixed[k] == make_vec({0.0, 0.0}));

  const auto one = iterate(cat, 0.0, make_vec({0.5, 0.5}), 1);
  REQUIRE(one[1](0) == 0.5);
  REQUIRE(one[1](1) == 0.0);
}

TEST_CASE("henon first step from the origin", "[maps]") {
  const auto h = henon_family();
  const auto orbit = iterate(h, 1.4, make_vec({0.0, 0.0}), 1);
  REQUIRE(orbit[1](0) == 1.0);
  REQUIRE(orbit[1](1) == 0.0);
}

TEST_CASE("henon escape names the step", "[maps]") {
  const auto h = henon_family();
  try {
    iterate(h, 1.4, make_vec({3.0, 3.0}), 50);
    FAIL("expected escape");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::basin_escape);
    REQUIRE(e.step().has_value());
  }
}

TEST_CASE("torus coordinates stay in the unit interval", "[maps]") {
  for (const auto& name : {"cat", "cat_nonlinear", "standard"}) {
    const auto f = make_family(name);
    const auto orbit = iterate(f, f.default_alpha, make_vec({0.123, 0.987}), 2000);
    for (std::size_t k = 0; k < orbit.size(); ++k)
      for (int i = 0; i < 2; ++i) {
        REQUIRE(orbit.coord(k, i) >= 0.0);
        REQUIRE(orbit.coord(k, i) < 1.0);
      }
  }
}

TEST_CASE("catalog Jacobians match central differences", "[maps]") {
  Rng rng(7);
  for (const auto& f : builtin_catalog()) {
    INFO(f.name);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec x = random_point(f, rng);
      const Mat exact = f.jacobian(f.default_alpha, x);
      const Mat fd = finite_difference_jacobian(f, f.default_alpha, x);
      REQUIRE((exact - fd).norm() / exact.norm() < 1e-5);
      REQUIRE(std::abs(exact.determinant()) > 0.0);
    }
  }
}

TEST_CASE("catalog parameter derivatives match central differences", "[maps]") {
  Rng rng(8);
  for (const auto& f : builtin_catalog()) {
    INFO(f.name);
    const double a = f.default_alpha, h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = random_point(f, rng);
      const Vec fd = (f.lift(a + h, x) - f.lift(a - h, x)) / (2 * h);
      const Vec exact = f.param_derivative(a, x);
      REQUIRE((exact - fd).norm() <= 1e-6 * (1.0 + exact.norm()));
    }
  }
}

TEST_CASE("inverse maps undo the forward map", "[maps]") {
  Rng rng(9);
  for (const auto& f : builtin_catalog()) {
    if (!f.has_inverse()) continue;
    INFO(f.name);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec y = random_point(f, rng);
      const Vec back = f.lift(f.default_alpha, f.inverse_lift(f.default_alpha, y));
      REQUIRE((back - y).norm() < 1e-10);
    }
  }
}

TEST_CASE("henon determinant is constant", "[maps]") {
  const auto h = henon_family();
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_point(h, rng);
    REQUIRE(std::abs(h.jacobian(1.4, x).determinant() + 0.3) < 1e-12);
  }
}

TEST_CASE("catalog parameter derivatives have the expected closed forms", "[maps]") {
  const auto h = make_family("henon");
  const Vec x = make_vec({0.7, -0.2});
  REQUIRE(h.param_derivative(1.4, x)(0) == Approx(-0.49));
  REQUIRE(h.param_derivative(1.4, x)(1) == 0.0);

  const auto ct = make_family("cat_translate");
  const Vec v1 = ct.param_derivative(0.0, make_vec({0.1, 0.2}));
  const Vec v2 = ct.param_derivative(0.3, make_vec({0.9, 0.4}));
  REQUIRE(v1 == v2);
}

TEST_CASE("orbits are bit-identical on repeat", "[maps]") {
  const auto f = make_family("cat_nonlinear");
  const auto a = iterate(f, 0.3, make_vec({0.31, 0.62}), 10000);
  const auto b = iterate(f, 0.3, make_vec({0.31, 0.62}), 10000);
  REQUIRE(a == b);
}

TEST_CASE("unknown systems and parameters are config errors", "[maps]") {
  REQUIRE_THROWS_AS(make_family("lorenz"), Error);
  try {
    make_family("henon", {{"a", 1.0}});
    FAIL("expected config error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("observable gradients match central differences", "[maps]") {
  Rng rng(11);
  for (int d : {2, 4}) {
    for (const auto& obs : observable_catalog(d)) {
      INFO(obs.name);
      for (int trial = 0; trial < 50; ++trial) {
        Vec x(d);
        for (int i = 0; i < d; ++i) x(i) = rng.uniform();
        const Vec g = obs.gradient(x);
        const Vec fd = fd_gradient(obs, x);
        REQUIRE((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
      }
    }
  }
}

TEST_CASE("simple observables", "[maps]") {
  const Chart c = Chart::torus(2);
  const auto cosx = parse_observable("cos:1,0", c);
  const Vec x = make_vec({0.1, 0.3});
  REQUIRE(cosx.gradient(x)(0) == Approx(-kTwoPi * std::sin(kTwoPi * 0.1)));
  REQUIRE(cosx.gradient(x)(1) == 0.0);

  const auto k = parse_observable("const:2.5", c);
  REQUIRE(k.eval(x) == 2.5);
  REQUIRE(k.gradient(x).norm() == 0.0);

  const auto p = parse_observable("product:0,1", c);
  REQUIRE(p.eval(x) == Approx(0.03));
  REQUIRE((p.gradient(x) - fd_gradient(p, x)).norm() < 1e-8);

  REQUIRE_THROWS_AS(parse_observable("tan:1", c), Error);
}

TEST_CASE("family perturbation evaluators agree along orbits", "[maps]") {
  for (const auto& f : builtin_catalog()) {
    if (!f.has_inverse()) continue;
    INFO(f.name);
    const auto x = family_perturbation(f, f.default_alpha);
    const Vec start = f.dimension == 2 && f.chart.is_torus() ? make_vec({0.2, 0.7})
                                                              : Vec(Vec::Constant(f.dimension, 0.05));
    const auto orbit = iterate(f, f.default_alpha, start, 200);
    for (std::size_t j = 0; j + 1 < orbit.size(); ++j) {
      const Vec a = x.along_orbit(orbit[j]);
      const Vec b = x.closed_form(orbit[j + 1]);
      REQUIRE((a - b).norm() < 1e-10);
    }
  }
}

TEST_CASE("sine field divergence", "[maps]") {
  const auto x11 = sine_field(2, 0, 0);
  const auto x12 = sine_field(2, 0, 1);
  const Vec y = make_vec({0.13, 0.71});
  REQUIRE(divergence_at(x11, y) == Approx(kTwoPi * std::cos(kTwoPi * 0.13)));
  REQUIRE(divergence_at(x12, y) == 0.0);
  PerturbationField fd = x11;
  fd.divergence = nullptr;
  REQUIRE(divergence_at(fd, y) == Approx(kTwoPi * std::cos(kTwoPi * 0.13)).epsilon(1e-8));
}
