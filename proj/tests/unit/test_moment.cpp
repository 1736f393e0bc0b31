#include "catch_amalgamated.hpp"

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "random_specs.hpp"
#include "scenarios.hpp"
#include "superbranch/cumulant.hpp"
#include "superbranch/moment.hpp"

using namespace superbranch;
using Catch::Approx;

namespace {

double sup_gap(const GridField& a, const GridField& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    for (std::size_t x = 0; x < a.values[i].size(); ++x) g = std::max(g, std::abs(a.values[i][x] - b.values[i][x]));
  }
  return g;
}

std::vector<double> grid_to(double horizon, double dt) {
  std::vector<double> g;
  for (int i = 0; i <= static_cast<int>(std::lround(horizon / dt)); ++i) g.push_back(i * dt);
  return g;
}

}  // namespace

TEST_CASE("T reduces to the motion semigroup without branching") {
  const auto spec = sbtest::two_site_motion(1.0);
  const double t = std::log(2.0) / 2.0;
  SolverConfig c;
  c.step = t / 500;
  const auto field = solve_T(spec, TestFunction({1.0, 0.0}), t, c);
  CHECK(field.final_values()[0] == Approx(0.75).margin(1e-8));
  CHECK(field.kind == MomentKind::T);
  const auto u = solve_U(spec, TestFunction({1.0, 0.0}), t, c);
  CHECK(u.final_values()[0] == Approx(0.75).margin(1e-8));
}

TEST_CASE("T examples") {
  const auto swap = solve_T(sbtest::critical_swap(1.0), TestFunction({0.3, 1.1}), 2.0);
  for (const auto& row : swap.values) CHECK(row[0] + row[1] == Approx(1.4).margin(1e-9));

  const auto decay = solve_T(sbtest::pure_drift(1.0), TestFunction({1.0}), 1.0);
  for (std::size_t i = 0; i < decay.times.size(); ++i) {
    CHECK(decay.values[i][0] == Approx(std::exp(-decay.times[i])).margin(1e-8));
  }
}

TEST_CASE("U examples") {
  sbtest::SpecSampler sampler(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto spec = sampler.spec();
    std::fill(spec.local.b.begin(), spec.local.b.end(), 0.0);
    const auto f = sampler.function(spec.size(), 1.0);
    CHECK(sup_gap(solve_T(spec, f, 1.0), solve_U(spec, f, 1.0)) <= 1e-12);
  }

  // single site, non-local offspring mass 0.5 at rate 1
  auto half = sbtest::bare(1);
  half.nonlocal.beta[0] = 1.0;
  half.nonlocal.mixture[0][0].d = 0.5;
  const auto u = solve_U(half, TestFunction({1.0}), 1.0);
  for (std::size_t i = 0; i < u.times.size(); ++i) {
    CHECK(u.values[i][0] == Approx(std::exp(-0.5 * u.times[i])).margin(1e-8));
  }
}

TEST_CASE("moment generator against the matrix exponential") {
  sbtest::SpecSampler sampler(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = sampler.spec();
    const auto f = sampler.function(spec.size(), 1.0);
    // independent assembly of B from the mean kernel, one column at a time
    const auto n = static_cast<Eigen::Index>(spec.size());
    Eigen::MatrixXd b = spec.motion.q;
    for (Eigen::Index y = 0; y < n; ++y) {
      std::vector<double> e(spec.size(), 0.0);
      e[static_cast<std::size_t>(y)] = 1.0;
      for (Eigen::Index x = 0; x < n; ++x) {
        const auto xs = static_cast<std::size_t>(x);
        b(x, y) += spec.nonlocal.beta[xs] * eval_mean_kernel(spec.nonlocal, xs, TestFunction(e));
      }
    }
    for (Eigen::Index x = 0; x < n; ++x) {
      b(x, x) -= spec.nonlocal.beta[static_cast<std::size_t>(x)] + spec.local.b[static_cast<std::size_t>(x)];
    }
    const Eigen::VectorXd exact = b.exp() * Eigen::Map<const Eigen::VectorXd>(f.values().data(), n);
    const auto field = solve_T(spec, f, 1.0);
    for (Eigen::Index x = 0; x < n; ++x) CHECK(field.final_values()[static_cast<std::size_t>(x)] == Approx(exact(x)).margin(1e-10));
  }
}

TEST_CASE("T is linear and a semigroup") {
  sbtest::SpecSampler sampler(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = sampler.spec();
    const auto f = sampler.function(spec.size(), 1.0);
    const auto g = sampler.function(spec.size(), 1.0);
    const double a = sampler.uniform(0.0, 3.0), c = sampler.uniform(0.0, 3.0);
    std::vector<double> mix(spec.size());
    for (std::size_t x = 0; x < mix.size(); ++x) mix[x] = a * f[x] + c * g[x];
    const auto tf = solve_T(spec, f, 1.0), tg = solve_T(spec, g, 1.0), tm = solve_T(spec, TestFunction(mix), 1.0);
    for (std::size_t x = 0; x < mix.size(); ++x) {
      CHECK(tm.final_values()[x] == Approx(a * tf.final_values()[x] + c * tg.final_values()[x]).margin(1e-10));
    }
    const auto half = solve_T(spec, f, 0.5);
    const auto twice = solve_T(spec, TestFunction(half.final_values()), 0.5);
    for (std::size_t x = 0; x < mix.size(); ++x) CHECK(std::abs(twice.final_values()[x] - tf.final_values()[x]) <= 1e-8);
  }
}

TEST_CASE("linearization of the cumulant recovers T") {
  const double theta = 1e-5;
  for (const auto& spec : {sbtest::quadratic(0.5), sbtest::critical_swap(1.0), sbtest::rebirth_swap(1.0)}) {
    std::vector<double> f(spec.size(), 0.0);
    f[0] = 1.0;
    std::vector<double> small(f);
    for (auto& v : small) v *= theta;
    const auto v = solve_cumulant(spec, TestFunction(small), 1.0);
    const auto t = solve_T(spec, TestFunction(f), 1.0);
    for (std::size_t x = 0; x < f.size(); ++x) CHECK(std::abs(v.final_values()[x] / theta - t.final_values()[x]) <= 1e-3);
  }
}

TEST_CASE("excessive gap examples") {
  const auto grid = grid_to(2.0, 0.1);
  sbtest::SpecSampler sampler(14);
  auto spec = sampler.spec();
  std::fill(spec.local.b.begin(), spec.local.b.end(), 0.0);
  CHECK(excessive_gap(spec, sampler.function(spec.size()), grid) <= 1e-12);

  const double gap = excessive_gap(sbtest::pure_drift(1.0), TestFunction({1.0}), grid);
  CHECK(gap <= 1e-12);
  CHECK(gap == Approx(0.0).margin(1e-12));  // attained at t = 0

  CHECK_THROWS_AS(excessive_gap(spec, sampler.function(spec.size()), std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(excessive_gap(spec, sampler.function(spec.size()), std::vector<double>{0.0505, 0.1}), LookupError);
}

TEST_CASE("excessive gap holds on random specs") {
  const auto grid = grid_to(2.0, 0.1);
  sbtest::SpecSampler sampler(15);
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = sampler.spec();
    CHECK(excessive_gap(spec, sampler.function(spec.size(), 2.0), grid) <= 1e-9);
  }
}

TEST_CASE("weighted excessive gap") {
  // two mass levels {1, 2} on one site, no motion: masses double at rate 1 per
  // branch; H = mass. With c1 = 1, T_t H <= e^{(c1 + ||b||) t} H.
  auto spec = sbtest::bare(2);
  spec.motion.q << -1.0, 1.0, 0.0, 0.0;
  const TestFunction h({1.0, 2.0});
  const auto grid = grid_to(1.0, 0.1);
  CHECK(weighted_excessive_gap(spec, h, 1.0, grid) <= 1e-9);
  CHECK(weighted_excessive_gap(spec, h, 0.0, grid) > 0.0);
  CHECK_THROWS_AS(weighted_excessive_gap(spec, h, -1.0, grid), ValidationError);
}
