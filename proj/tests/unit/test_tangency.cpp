#include <catch_amalgamated.hpp>

#include <cmath>

#include "linresp/tangency.hpp"

using namespace linresp;
using Catch::Approx;

namespace {

// See test_response.cpp: statistical unit checks use 4 standard errors.
constexpr double kSigma = 4.0;

const double kCantorDim = std::log(2.0) / std::log(3.0);

struct Planar {
  MapFamily family;
  Trajectory orbit;
  OseledetsSplitting split;
};

Planar planar(const std::string& name, std::size_t steps, std::uint64_t seed) {
  Planar p{make_family(name), {}, {}};
  const auto m = srb_sample(p.family, p.family.default_alpha, InitialSampler::for_family(p.family, seed), 10000,
                            steps + 2000 + 1, 1);
  p.orbit = m.orbits[0];
  p.split = compute_clvs(TangentCocycle(p.family, p.family.default_alpha, p.orbit), steps, 1000);
  return p;
}

std::vector<double> cantor_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> xs;
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, scale = 1.0;
    for (int k = 0; k < 34; ++k) {
      scale /= 3.0;
      if (rng.uniform(0.0, 1.0) < 0.5) x += 2.0 * scale;
    }
    xs.push_back(x);
  }
  return xs;
}

ProjectedSamples on_line(const std::vector<double>& thetas, double weight) {
  ProjectedSamples s;
  s.theta = thetas;
  s.weights.assign(thetas.size(), weight);
  s.source_weight = weight * static_cast<double>(thetas.size());
  return s;
}

}  // namespace

TEST_CASE("cat map has no folds", "[tangency]") {
  const auto p = planar("cat", 20000, 1);
  const TangentCocycle c(p.family, 0.0, p.orbit);
  REQUIRE(detect_folds(c, p.split, 1.0).empty());
  REQUIRE(detect_folds(c, p.split, 0.0).empty());
}

TEST_CASE("henon folds", "[tangency]") {
  const auto p = planar("henon", 100000, 3);
  const TangentCocycle c(p.family, 1.4, p.orbit);
  const auto folds = detect_folds(c, p.split, 0.01);
  REQUIRE_FALSE(folds.empty());
  for (std::size_t i = 1; i < folds.size(); ++i) {
    REQUIRE(folds[i - 1].angle <= folds[i].angle);
    REQUIRE(folds[i].angle < 0.01);
    REQUIRE((folds[i].point - folds[0].point).norm() > 0.05);
  }
  REQUIRE(detect_folds(c, p.split, 0.0).empty());
  REQUIRE(detect_folds(c, p.split, -1.0).empty());
}

TEST_CASE("projection on the cat map is affine", "[tangency]") {
  const auto p = planar("cat", 5000, 2);
  const TangentCocycle c(p.family, 0.0, p.orbit);
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const Vec es = make_vec({1.0, -phi}).normalized();
  const Vec eta = make_vec({phi, 1.0}).normalized();
  const Vec base = make_vec({0.5, 0.5});
  const Vec dir = make_vec({1.0, 0.2}).normalized();
  const auto frame = TransversalFrame::make(p.family.chart, base, dir, eta, 1e-2, 0.3);
  const auto proj = project_along_stable(frame, c, p.split);
  REQUIRE(proj.size() > 1000);
  REQUIRE(proj.excluded == 0);

  std::size_t k = 0;
  for (std::size_t i = 0; i < p.split.size(); ++i) {
    const Vec d = p.family.chart.displacement(base, p.orbit[p.split.offset + i]);
    if (d.norm() > 0.3) continue;
    // d = theta dir + t es solved by Cramer's rule
    const double det = dir(0) * es(1) - dir(1) * es(0);
    const double theta = (d(0) * es(1) - d(1) * es(0)) / det;
    REQUIRE(std::abs(proj.theta[k++] - theta) < 1e-10);
  }
  REQUIRE(k == proj.size());
}

TEST_CASE("projection fixes points on the line and conserves mass", "[tangency]") {
  const Chart flat = Chart::flat(2);
  const Vec base = make_vec({0.1, -0.2});
  const Vec dir = make_vec({0.6, 0.8});
  const auto frame = TransversalFrame::make(flat, base, dir, make_vec({1.0, 0.3}));
  std::vector<Vec> pts, normals;
  std::vector<double> w;
  for (int i = 0; i < 50; ++i) {
    pts.push_back(frame.at(0.01 * i - 0.2));
    normals.push_back(make_vec({1.0, 0.1 * (i % 7)}));
    w.push_back(0.25 * (1 + i % 3));
  }
  const auto proj = project_along_stable(frame, pts, normals, w);
  for (int i = 0; i < 50; ++i) REQUIRE(proj.theta[static_cast<std::size_t>(i)] == Approx(0.01 * i - 0.2).margin(1e-14));

  for (int i = 0; i < 5; ++i) {
    pts.push_back(make_vec({0.3, 0.4}));
    normals.push_back(make_vec({0.8, -0.6}));
    w.push_back(0.5);
  }
  const auto mixed = project_along_stable(frame, pts, normals, w);
  REQUIRE(mixed.excluded == 5);
  REQUIRE(mixed.projected_weight() == mixed.source_weight - mixed.excluded_weight);

  std::vector<Vec> par(pts.size(), make_vec({0.8, -0.6}));
  try {
    project_along_stable(frame, pts, par, w);
    FAIL("expected frame misalignment");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::numerical_degeneracy);
  }
}

TEST_CASE("density profile of uniform samples", "[tangency]") {
  Rng rng(11);
  const std::size_t n = 200000;
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(rng.uniform(0.0, 1.0));
  const auto s = on_line(t, 1.0 / static_cast<double>(n));
  DensityOptions opt;
  opt.lo = 0.0;
  opt.hi = 1.5;
  const auto p = density_profile(s, 0.05, opt);
  REQUIRE(p.size() == 30);
  REQUIRE(p.integral() + p.outside_mass == Approx(s.projected_weight()).epsilon(1e-6));
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p.theta[b] > 1.0) {
      REQUIRE(p.values[b] == 0.0);
      continue;
    }
    REQUIRE(std::abs(p.values[b] - 1.0) <= kSigma * p.std_errors[b]);
  }
  const auto full = density_profile(s, 0.01);
  REQUIRE(full.integral() == Approx(s.projected_weight()).epsilon(1e-6));
  REQUIRE(full.outside_mass == 0.0);
  REQUIRE_THROWS_AS(density_profile(s, 0.0), Error);
  REQUIRE_THROWS_AS(density_profile(on_line({0.1, 0.2}, 1.0), 0.1), Error);
}

TEST_CASE("density profile of inverse-CDF samples", "[tangency]") {
  Rng rng(12);
  const std::size_t n = 200000;
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(std::pow(rng.uniform(0.0, 1.0), 2.0 / 3.0));
  const auto s = on_line(t, 1.0 / static_cast<double>(n));
  DensityOptions opt;
  opt.lo = 0.0;
  opt.hi = 1.0;
  const auto p = density_profile(s, 0.04, opt);
  for (std::size_t b = 0; b < p.size(); ++b) {
    const double a = p.theta[b] - 0.02, c = p.theta[b] + 0.02;
    const double exact = (std::pow(c, 1.5) - std::pow(a, 1.5)) / 0.04;
    REQUIRE(std::abs(p.values[b] - exact) <= kSigma * p.std_errors[b]);
  }
}

TEST_CASE("convolution of the uniform measure", "[tangency]") {
  ConvolutionOptions opt;
  opt.grid = 1 << 12;
  const auto p = synthetic_fold_convolution(SigmaSpec::uniform(), 1.0, opt);
  double err = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) err = std::max(err, std::abs(p.values[k] - 2.0 * std::sqrt(p.theta[k])));
  REQUIRE(err < 1e-3);

  opt.two_sided = true;
  const auto q = synthetic_fold_convolution(SigmaSpec::uniform(), 1.0, opt);
  for (std::size_t k = 0; k < q.size(); ++k)
    REQUIRE(q.values[k] == Approx(2.0 * (std::sqrt(q.theta[k]) + std::sqrt(1.0 - q.theta[k]))).margin(1e-12));

  opt.two_sided = false;
  const auto cut = synthetic_fold_convolution(SigmaSpec::uniform(), 0.25, opt);
  for (std::size_t k = 0; k < cut.size(); ++k)
    REQUIRE(cut.values[k] == Approx(2.0 * std::sqrt(std::min(cut.theta[k], 0.25))).margin(1e-12));

  opt.cell_average = true;
  const auto avg = synthetic_fold_convolution(SigmaSpec::uniform(), 1.0, opt);
  const double h = avg.bandwidth;
  for (std::size_t k = 0; k < avg.size(); ++k) {
    const double a = avg.theta[k] - 0.5 * h, b = avg.theta[k] + 0.5 * h;
    REQUIRE(avg.values[k] == Approx(4.0 / 3.0 * (std::pow(b, 1.5) - std::pow(a, 1.5)) / h).epsilon(1e-9));
  }
}

TEST_CASE("convolution of a point mass", "[tangency]") {
  ConvolutionOptions opt;
  opt.grid = 1 << 10;
  opt.two_sided = true;
  const double tau = 0.3 + 1e-7;
  const auto p = synthetic_fold_convolution(SigmaSpec::discrete({tau}), 10.0, opt);
  for (std::size_t k = 0; k < p.size(); ++k)
    REQUIRE(p.values[k] == Approx(1.0 / std::sqrt(std::abs(p.theta[k] - tau))).epsilon(1e-12));
  opt.two_sided = false;
  const auto one = synthetic_fold_convolution(SigmaSpec::discrete({tau}), 10.0, opt);
  for (std::size_t k = 0; k < one.size(); ++k)
    REQUIRE(one.values[k] == (one.theta[k] > tau ? Approx(1.0 / std::sqrt(one.theta[k] - tau)) : Approx(0.0)));
  const auto on = synthetic_fold_convolution(SigmaSpec::discrete({0.5}), 10.0, opt);
  REQUIRE(std::isinf(on.values[512]));
}

TEST_CASE("convolution Hoelder law", "[tangency]") {
  ConvolutionOptions opt;
  opt.grid = 1 << 16;
  const auto cantor = SigmaSpec::cantor(1.0 / 3.0, 12);
  REQUIRE(cantor.dimension == Approx(kCantorDim));
  REQUIRE(cantor.mass() == Approx(1.0));
  REQUIRE(cantor.psi(1.0 / 3.0) == Approx(0.5));

  const auto hu = holder_exponent(synthetic_fold_convolution(SigmaSpec::uniform(), 1.0, opt));
  REQUIRE(hu.exponent == Approx(0.5).margin(0.05));
  const auto hc = holder_exponent(synthetic_fold_convolution(cantor, 1.0, opt));
  REQUIRE(hc.exponent == Approx(kCantorDim - 0.5).margin(0.05));
  REQUIRE(hc.reliable);
  const auto mix = SigmaSpec::mixture(0.5, SigmaSpec::uniform(), cantor);
  const auto hm = holder_exponent(synthetic_fold_convolution(mix, 1.0, opt));
  REQUIRE(hm.exponent == Approx(kCantorDim - 0.5).margin(0.05));
}

TEST_CASE("sub-threshold measures blow up under refinement", "[tangency]") {
  const double r = std::pow(2.0, -1.0 / 0.3);
  const auto sigma = SigmaSpec::cantor(r, 12);
  REQUIRE(sigma.dimension == Approx(0.3));
  double area = 0.0;  // integral over [0, 1] of the convolution: sum of m * 2 sqrt(1 - tau) averaged per piece
  for (const auto& q : sigma.pieces)
    area += q.mass * 4.0 / 3.0 * (std::pow(1.0 - q.a, 1.5) - std::pow(1.0 - q.b, 1.5)) / (q.b - q.a);
  double prev = 0.0;
  std::vector<double> maxima;
  for (std::size_t g : {1u << 10, 1u << 12, 1u << 14, 1u << 16}) {
    ConvolutionOptions opt;
    opt.grid = g;
    opt.cell_average = true;
    const auto p = synthetic_fold_convolution(sigma, 1.0, opt);
    REQUIRE(p.integral() == Approx(area).epsilon(1e-6));
    const double m = *std::max_element(p.values.begin(), p.values.end());
    REQUIRE(m > prev);
    prev = m;
    maxima.push_back(m);
  }
  // four-fold refinement: predicted growth 4^(1/2 - d)
  const double growth = std::pow(maxima.back() / maxima.front(), 1.0 / 3.0);
  REQUIRE(growth == Approx(std::pow(4.0, 0.2)).epsilon(0.2));
}

TEST_CASE("hoelder exponent of elementary functions", "[tangency]") {
  const std::size_t n = 1 << 14;
  const double h = 1.0 / static_cast<double>(n);
  std::vector<double> sq, line, flat;
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * h;
    sq.push_back(std::sqrt(t));
    line.push_back(t);
    flat.push_back(0.7);
  }
  const auto es = holder_exponent(sq, h);
  REQUIRE(es.exponent == Approx(0.5).margin(0.02));
  REQUIRE(es.decades >= 1.5);
  REQUIRE(es.reliable);
  REQUIRE(holder_exponent(line, h).exponent == Approx(1.0).margin(0.02));
  const auto ef = holder_exponent(flat, h);
  REQUIRE(ef.exponent >= 1.0);
  REQUIRE(ef.capped);
  REQUIRE(ef.at_noise_floor);
  REQUIRE_FALSE(ef.reliable);

  HolderOptions narrow;
  narrow.max_scale = 8 * h;
  REQUIRE_FALSE(holder_exponent(sq, h, narrow).reliable);
}

TEST_CASE("counting function exponents", "[tangency]") {
  Rng rng(5);
  std::vector<double> u;
  for (int i = 0; i < 20000; ++i) u.push_back(rng.uniform(0.0, 1.0));
  const auto cu = counting_function(u);
  REQUIRE(cu.exponent == Approx(1.0).margin(0.05));
  for (std::size_t i = 1; i < cu.cumulative.size(); ++i) REQUIRE(cu.cumulative[i] >= cu.cumulative[i - 1]);
  REQUIRE(cu.cumulative.back() == Approx(1.0));
  REQUIRE(cu.psi(-1.0) == 0.0);
  REQUIRE(cu.psi(0.5) == Approx(0.5).margin(0.02));
  REQUIRE(cu.holder_constant >= 1.0);

  const auto cc = counting_function(cantor_points(20000, 6));
  REQUIRE(cc.exponent == Approx(kCantorDim).margin(0.05));
  REQUIRE(cc.exponent <= 1.0);

  const auto atom = counting_function(std::vector<double>(200, 0.4));
  REQUIRE(atom.atomic);
  REQUIRE(atom.exponent == 0.0);

  try {
    counting_function(std::vector<double>(99, 0.1));
    FAIL("expected insufficient data");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::insufficient_data);
  }
}

TEST_CASE("henon fold parameters respect the stable dimension", "[tangency]") {
  const auto p = planar("henon", 100000, 1);
  const TangentCocycle c(p.family, 1.4, p.orbit);
  const auto folds = detect_folds(c, p.split, 0.01);
  REQUIRE_FALSE(folds.empty());
  const auto scan = scan_fold_parameters(c, p.split, folds.front());
  REQUIRE(scan.thetas.size() >= 100);
  REQUIRE(scan.leaves_with_fold > scan.leaves / 2);
  const auto cf = counting_function(scan.thetas);
  const auto dims = dimension_estimates(p.split.spectrum);
  REQUIRE(cf.exponent <= std::min(1.0, dims.stable_dim) + 0.05);
  REQUIRE(cf.exponent > 0.0);
}
