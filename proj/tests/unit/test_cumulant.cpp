#include "catch_amalgamated.hpp"

#include <cmath>

#include "random_specs.hpp"
#include "scenarios.hpp"
#include "superbranch/cumulant.hpp"
#include "superbranch/particle_laws.hpp"

using namespace superbranch;
using Catch::Approx;

namespace {

SolverConfig method(SolverMethod m, double step = 1e-3) {
  SolverConfig c;
  c.step = step;
  c.method = m;
  return c;
}

double sup_gap(const GridField& a, const GridField& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    for (std::size_t x = 0; x < a.values[i].size(); ++x) g = std::max(g, std::abs(a.values[i][x] - b.values[i][x]));
  }
  return g;
}

// Plain RK4 for a small autonomous system y' = F(y), independent of the library.
template <class F>
std::vector<double> rk4_oracle(std::vector<double> y, double horizon, int steps, F rhs) {
  const double h = horizon / steps;
  const std::size_t n = y.size();
  auto axpy = [n](const std::vector<double>& a, double s, const std::vector<double>& b) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  for (int i = 0; i < steps; ++i) {
    const auto k1 = rhs(y);
    const auto k2 = rhs(axpy(y, h / 2, k1));
    const auto k3 = rhs(axpy(y, h / 2, k2));
    const auto k4 = rhs(axpy(y, h, k3));
    for (std::size_t j = 0; j < n; ++j) y[j] += h / 6 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
  }
  return y;
}

const SolverMethod kMethods[] = {SolverMethod::Rk4Ode, SolverMethod::PicardMild};

}  // namespace

TEST_CASE("solver config and method names") {
  CHECK(parse_method("rk4-ode") == SolverMethod::Rk4Ode);
  CHECK(parse_method("picard-mild") == SolverMethod::PicardMild);
  CHECK(to_string(SolverMethod::PicardMild) == "picard-mild");
  CHECK_THROWS_AS(parse_method("euler"), ValidationError);
  SolverConfig bad;
  bad.step = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SolverConfig{};
  bad.picard_tol = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("pure motion reproduces the two-site matrix exponential") {
  const auto spec = sbtest::two_site_motion(1.0);
  const double t = std::log(2.0) / 2.0;  // exp(-2t) = 1/2
  for (auto m : kMethods) {
    const auto field = solve_cumulant(spec, TestFunction({1.0, 0.0}), t, method(m, t / 500));
    CHECK(field.final_values()[0] == Approx(0.75).margin(1e-8));
    CHECK(field.final_values()[1] == Approx(0.25).margin(1e-8));
  }
}

TEST_CASE("single-site Riccati solution") {
  const auto spec = sbtest::quadratic(0.5);
  for (auto m : kMethods) {
    const auto field = solve_cumulant(spec, TestFunction({1.0}), 1.0, method(m));
    CHECK(field.at(1.0)[0] == Approx(2.0 / 3.0).margin(1e-6));
    CHECK(field.at(0.5)[0] == Approx(1.0 / 1.25).margin(1e-6));
    CHECK(field.values[0][0] == 1.0);
    CHECK(laplace_functional(std::vector<double>{1.0}, field, 1.0) == Approx(std::exp(-2.0 / 3.0)).margin(1e-6));
    CHECK(std::exp(-2.0 / 3.0) == Approx(0.513417).margin(1e-6));
  }
}

TEST_CASE("critical swap: closed form and conservation") {
  const auto spec = sbtest::critical_swap(1.0);
  for (auto m : kMethods) {
    const auto field = solve_cumulant(spec, TestFunction({1.0, 0.0}), 1.0, method(m));
    for (std::size_t i = 0; i < field.times.size(); ++i) {
      const double t = field.times[i];
      CHECK(field.values[i][0] == Approx((1.0 + std::exp(-2.0 * t)) / 2.0).margin(1e-9));
      CHECK(field.values[i][0] + field.values[i][1] == Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("rebirth swap: linear growth with cosh and sinh") {
  const auto spec = sbtest::rebirth_swap(1.0);
  for (auto m : kMethods) {
    const auto field = solve_cumulant(spec, TestFunction({1.0, 0.0}), 1.0, method(m));
    CHECK(field.at(1.0)[0] == Approx(std::cosh(1.0)).margin(1e-6));
    CHECK(field.at(1.0)[1] == Approx(std::sinh(1.0)).margin(1e-6));
    const double l = laplace_functional(std::vector<double>{1.0, 0.0}, field, 1.0);
    CHECK(l == Approx(std::exp(-std::cosh(1.0))).margin(1e-6));
    CHECK(std::exp(-std::cosh(1.0)) == Approx(0.213716).margin(1e-5));
  }
}

TEST_CASE("laplace_functional edge cases") {
  const auto spec = sbtest::quadratic(0.5);
  const auto zero = solve_cumulant(spec, TestFunction({0.0}), 1.0);
  CHECK(laplace_functional(std::vector<double>{3.0}, zero, 1.0) == 1.0);
  CHECK_THROWS_AS(laplace_functional(std::vector<double>{1.0}, zero, 0.0005), LookupError);
  CHECK_THROWS_AS(laplace_functional(std::vector<double>{1.0}, zero, 1.5), LookupError);
  CHECK_THROWS_AS(laplace_functional(std::vector<double>{1.0, 1.0}, zero, 1.0), ValidationError);
}

TEST_CASE("semigroup residuals") {
  CHECK(semigroup_residual(sbtest::two_site_motion(1.0), TestFunction({1.0, 0.2}), 0.5, 0.5) <= 1e-10);
  CHECK(semigroup_residual(sbtest::quadratic(0.5), TestFunction({1.0}), 0.5, 0.5) <= 1e-6);
  CHECK(semigroup_residual(sbtest::critical_swap(1.0), TestFunction({1.0, 0.0}), 0.5, 0.5) <= 1e-8);
  SolverConfig picard = method(SolverMethod::PicardMild);
  CHECK(semigroup_residual(sbtest::quadratic(0.5), TestFunction({1.0}), 0.5, 0.5, picard) <= 1e-6);
  CHECK_THROWS_AS(semigroup_residual(sbtest::quadratic(0.5), TestFunction({1.0}), 0.0, 0.5), ValidationError);
}

TEST_CASE("solver error paths") {
  CHECK_THROWS_AS(solve_cumulant(sbtest::quadratic(0.5), TestFunction({1.0}), 1.0005, method(SolverMethod::Rk4Ode)),
                  ValidationError);
  CHECK_THROWS_AS(solve_cumulant(sbtest::quadratic(0.5), TestFunction({1.0, 2.0}), 1.0), ValidationError);

  // explicit RK4 far outside its stability region overshoots below zero
  const auto stiff = sbtest::two_site_motion(1000.0);
  CHECK_THROWS_AS(solve_cumulant(stiff, TestFunction({1.0, 0.0}), 1.0, method(SolverMethod::Rk4Ode, 0.01)),
                  InstabilityError);

  SolverConfig starved = method(SolverMethod::PicardMild);
  starved.picard_max_iter = 2;
  try {
    solve_cumulant(sbtest::quadratic(0.5), TestFunction({1.0}), 1.0, starved);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.residual() > starved.picard_tol);
  }
}

TEST_CASE("field metadata") {
  const auto spec = sbtest::critical_swap(1.0);
  const auto a = solve_cumulant(spec, TestFunction({1.0, 0.0}), 0.5);
  const auto b = solve_cumulant(spec, TestFunction({1.0, 0.0}), 0.5);
  const auto c = solve_cumulant(spec, TestFunction({0.0, 1.0}), 0.5);
  CHECK(a.spec_hash == b.spec_hash);
  CHECK(a.f_hash == b.f_hash);
  CHECK(a.f_hash != c.f_hash);
  CHECK(a.spec_hash != hash_spec(sbtest::critical_swap(2.0)));
  CHECK(a.values == b.values);
  CHECK(a.times.size() == 501);
  CHECK(a.horizon() == Approx(0.5).epsilon(1e-15));
}

TEST_CASE("random specs: methods agree, values positive and monotone in f") {
  sbtest::SpecSampler sampler(41);
  for (int trial = 0; trial < 12; ++trial) {
    const auto spec = sampler.spec(1, 3);
    const auto f = sampler.function(spec.size(), 2.0);
    const auto rk = solve_cumulant(spec, f, 1.0, method(SolverMethod::Rk4Ode, 1e-2));
    const auto pm = solve_cumulant(spec, f, 1.0, method(SolverMethod::PicardMild, 1e-2));
    // trapezoid quadrature at 1e-2 is second order
    CHECK(sup_gap(rk, pm) <= 1e-3);
    for (const auto& row : rk.values) {
      for (double v : row) CHECK(v >= 0.0);
    }
    std::vector<double> bigger(f.values().begin(), f.values().end());
    for (auto& v : bigger) v += sampler.uniform(0.0, 1.0);
    const auto up = solve_cumulant(spec, TestFunction(bigger), 1.0, method(SolverMethod::Rk4Ode, 1e-2));
    for (std::size_t i = 0; i < rk.values.size(); ++i) {
      for (std::size_t x = 0; x < spec.size(); ++x) CHECK(up.values[i][x] >= rk.values[i][x] - 1e-12);
    }
  }
}

TEST_CASE("finite-k solves converge to the limit at rate 1/k") {
  // negative drift makes phi_k differ from phi by a term of order 1/k
  auto spec = sbtest::quadratic(0.5);
  spec.local.b[0] = -0.5;
  spec.local.atoms[0] = {{0.5, 0.4}};
  const TestFunction f({1.0});
  const auto limit = solve_cumulant(spec, f, 1.0);
  const double g64 = sup_gap(solve_cumulant_k(build_particle_laws(spec, 64), spec, f, 1.0), limit);
  const double g128 = sup_gap(solve_cumulant_k(build_particle_laws(spec, 128), spec, f, 1.0), limit);
  REQUIRE(g64 > 1e-9);
  CHECK(g128 / g64 == Approx(0.5).margin(0.1));

  // binary splitting is exact at every k
  const auto binary = sbtest::quadratic(0.5);
  const auto exact = solve_cumulant(binary, f, 1.0);
  CHECK(sup_gap(solve_cumulant_k(build_particle_laws(binary, 64), binary, f, 1.0), exact) == 0.0);
}

TEST_CASE("controlled immigration reductions") {
  const auto spec1 = sbtest::quadratic(1.0);
  const auto spec2 = sbtest::quadratic(1.0);
  for (auto m : kMethods) {
    const auto [v1, v2] = solve_controlled_immigration(spec1, spec2, TestFunction({0.7}), TestFunction({0.0}), 1.0,
                                                       method(m));
    for (const auto& row : v2.values) CHECK(row[0] == 0.0);
    const auto alone = solve_cumulant(spec1, TestFunction({0.7}), 1.0, method(m));
    CHECK(sup_gap(v1, alone) <= 1e-12);

    const auto [z1, z2] = solve_controlled_immigration(spec1, spec2, TestFunction({0.0}), TestFunction({0.0}), 1.0,
                                                       method(m));
    CHECK(z1.final_values()[0] == 0.0);
    CHECK(z2.final_values()[0] == 0.0);
  }
}

TEST_CASE("controlled immigration: immigration source against an independent joint integration") {
  const auto spec = sbtest::quadratic(1.0);
  const auto [v1, v2] = solve_controlled_immigration(spec, spec, TestFunction({0.0}), TestFunction({1.0}), 1.0);
  CHECK(v2.at(1.0)[0] == Approx(0.5).margin(1e-6));
  CHECK(v1.at(1.0)[0] > 0.0);

  // (v1, v2)' = (-v1^2 + v2, -v2^2) as one system
  auto rhs = [](const std::vector<double>& y) { return std::vector<double>{-y[0] * y[0] + y[1], -y[1] * y[1]}; };
  const auto fine = rk4_oracle({0.0, 1.0}, 1.0, 2000, rhs);
  const auto finer = rk4_oracle({0.0, 1.0}, 1.0, 4000, rhs);
  CHECK(std::abs(fine[0] - finer[0]) <= 1e-6);
  CHECK(v1.at(1.0)[0] == Approx(finer[0]).margin(1e-6));

  const auto [p1, p2] = solve_controlled_immigration(spec, spec, TestFunction({0.0}), TestFunction({1.0}), 1.0,
                                                     method(SolverMethod::PicardMild));
  CHECK(sup_gap(p1, v1) <= 1e-5);
  CHECK(sup_gap(p2, v2) <= 1e-5);

  // two sites with different motions per type
  auto s1 = sbtest::two_site_motion(1.0);
  s1.local.c = {0.5, 1.0};
  auto s2 = sbtest::two_site_motion(3.0);
  s2.local.c = {1.0, 0.2};
  const auto [a1, a2] = solve_controlled_immigration(s1, s2, TestFunction({0.3, 0.0}), TestFunction({0.0, 1.0}), 1.0);
  auto rhs4 = [](const std::vector<double>& y) {
    // y = (v1(0), v1(1), v2(0), v2(1))
    return std::vector<double>{(y[1] - y[0]) - 0.5 * y[0] * y[0] + y[2], (y[0] - y[1]) - y[1] * y[1] + y[3],
                               3 * (y[3] - y[2]) - y[2] * y[2], 3 * (y[2] - y[3]) - 0.2 * y[3] * y[3]};
  };
  const auto ref = rk4_oracle({0.3, 0.0, 0.0, 1.0}, 1.0, 4000, rhs4);
  CHECK(a1.at(1.0)[0] == Approx(ref[0]).margin(1e-8));
  CHECK(a1.at(1.0)[1] == Approx(ref[1]).margin(1e-8));
  CHECK(a2.at(1.0)[0] == Approx(ref[2]).margin(1e-8));
  CHECK(a2.at(1.0)[1] == Approx(ref[3]).margin(1e-8));
}

TEST_CASE("inhomogeneous mass solves") {
  const auto motion = MotionGenerator::still(1);
  MassDependentPhi phi = [](Site, double a, double z) { return a * z * z; };

  // constant mass: identical to the frozen-coefficient solve
  const MassFlow frozen{0.0};
  const auto w = solve_inhomogeneous_mass(motion, frozen, phi, 2.0, 0.0, 1.0, TestFunction({1.0}));
  CHECK(w.final_values()[0] == Approx(1.0 / 3.0).margin(1e-6));
  const auto ref = solve_cumulant(sbtest::quadratic(2.0), TestFunction({1.0}), 1.0);
  CHECK(sup_gap(w, ref) <= 1e-12);

  // representation: cohort of mass a started at r equals the solve from g(r, a)
  const MassFlow doubling{std::log(2.0)};
  Eigen::MatrixXd q(2, 2);
  q << -1, 1, 0.5, -0.5;
  const MotionGenerator two{q, doubling, false};
  MassDependentPhi phi2 = [](Site x, double a, double z) { return (x == 0 ? 0.5 : 1.5) * a * z * z + 0.2 * z; };
  const TestFunction f({1.0, 0.4});
  const auto lhs = solve_inhomogeneous_mass(two, doubling, phi2, 1.0, 0.5, 1.0, f);
  const auto rhs = solve_mass_cumulant(two, doubling, phi2, doubling(0.5, 1.0), 0.5, f);
  CHECK(doubling(0.5, 1.0) == Approx(std::sqrt(2.0)).epsilon(1e-15));
  for (std::size_t x = 0; x < 2; ++x) CHECK(lhs.final_values()[x] == Approx(rhs.final_values()[x]).margin(1e-8));

  CHECK_THROWS_AS(solve_inhomogeneous_mass(motion, frozen, phi, 1.0, 0.7, 0.5, TestFunction({1.0})), ValidationError);
  CHECK_THROWS_AS(solve_inhomogeneous_mass(motion, frozen, phi, 0.0, 0.0, 0.5, TestFunction({1.0})), ValidationError);
}
