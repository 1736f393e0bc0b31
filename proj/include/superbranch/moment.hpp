#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "superbranch/age.hpp"
#include "superbranch/cumulant.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"

namespace superbranch {

enum class MomentKind { T, U };

inline std::string to_string(MomentKind k) { return k == MomentKind::T ? "T" : "U"; }

struct MomentField : GridField {
  MomentKind kind = MomentKind::T;
  std::size_t clamped = 0;
};

// Generator of T: Q + beta (M - I) - b. Dropping the b term gives the generator of U.
inline Eigen::MatrixXd moment_generator(const LimitSystemSpec& spec, MomentKind kind) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.size());
  Eigen::MatrixXd b = spec.motion.q;
  const Eigen::MatrixXd m = mean_kernel_matrix(spec.nonlocal);
  for (Eigen::Index x = 0; x < n; ++x) {
    const double beta = spec.nonlocal.beta[static_cast<std::size_t>(x)];
    b.row(x) += beta * m.row(x);
    b(x, x) -= beta;
    if (kind == MomentKind::T) b(x, x) -= spec.local.b[static_cast<std::size_t>(x)];
  }
  return b;
}

// ||b|| = max_x |b(x)|
inline double drift_norm(const LocalMechanism& local) {
  double m = 0.0;
  for (double v : local.b) m = std::max(m, std::abs(v));
  return m;
}

namespace detail {

// Fixed-step RK4 for the linear system dV/dt = BV, applied as its one-step
// propagator I + hB + (hB)^2/2 + (hB)^3/6 + (hB)^4/24.
inline MomentField integrate_linear(const Eigen::MatrixXd& b, std::span<const double> f, double horizon,
                                    const SolverConfig& config, MomentKind kind) {
  config.validate();
  const std::size_t n_steps = grid_steps(horizon, config.step);
  const auto n = static_cast<Eigen::Index>(f.size());
  const Eigen::MatrixXd hb = config.step * b;
  const Eigen::MatrixXd hb2 = hb * hb;
  const Eigen::MatrixXd hb3 = hb2 * hb;
  const Eigen::MatrixXd prop = Eigen::MatrixXd::Identity(n, n) + hb + hb2 / 2.0 + hb3 / 6.0 + hb3 * hb / 24.0;

  MomentField field;
  field.kind = kind;
  init_grid(field, config.step, n_steps);
  field.values[0].assign(f.begin(), f.end());
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(f.data(), n);
  std::vector<double> row(f.size());
  for (std::size_t i = 1; i <= n_steps; ++i) {
    v = prop * v;
    row.assign(v.data(), v.data() + n);
    check_finite(row, field.times[i]);
    enforce_positive(row, config.step, field.clamped, field.times[i]);
    v = Eigen::Map<const Eigen::VectorXd>(row.data(), n);
    field.values[i] = row;
  }
  return field;
}

}  // namespace detail

inline MomentField solve_T(const LimitSystemSpec& spec, const TestFunction& f, double horizon,
                           const SolverConfig& config = {}) {
  check_solver_inputs(spec, f);
  return detail::integrate_linear(moment_generator(spec, MomentKind::T), f.values(), horizon, config, MomentKind::T);
}

inline MomentField solve_U(const LimitSystemSpec& spec, const TestFunction& f, double horizon,
                           const SolverConfig& config = {}) {
  check_solver_inputs(spec, f);
  return detail::integrate_linear(moment_generator(spec, MomentKind::U), f.values(), horizon, config, MomentKind::U);
}

// max over grid times and sites of T_t f - exp(||b|| t) U_t f; the comparison
// bound says this is <= 0 up to integrator error.
inline double excessive_gap(const LimitSystemSpec& spec, const TestFunction& f, std::span<const double> grid,
                            const SolverConfig& config = {}) {
  if (grid.empty()) throw ValidationError("excessive_gap needs at least one grid time");
  const double horizon = *std::max_element(grid.begin(), grid.end());
  const MomentField t_field = solve_T(spec, f, horizon, config);
  const MomentField u_field = solve_U(spec, f, horizon, config);
  const double norm_b = drift_norm(spec.local);
  double gap = -std::numeric_limits<double>::infinity();
  for (double t : grid) {
    const auto& tv = t_field.at(t);
    const auto& uv = u_field.at(t);
    const double growth = std::exp(norm_b * t);
    for (std::size_t x = 0; x < tv.size(); ++x) gap = std::max(gap, tv[x] - growth * uv[x]);
  }
  return gap;
}

// Weighted bound on a flattened (site, mass level) space: with H(x, a) = a,
// max over the grid of T_t H - exp((c1 + ||b||) t) H.
inline double weighted_excessive_gap(const LimitSystemSpec& spec, const TestFunction& weight, double c1,
                                     std::span<const double> grid, const SolverConfig& config = {}) {
  if (grid.empty()) throw ValidationError("weighted_excessive_gap needs at least one grid time");
  if (!(c1 >= 0.0)) throw ValidationError("c1 must be >= 0");
  const double horizon = *std::max_element(grid.begin(), grid.end());
  const MomentField t_field = solve_T(spec, weight, horizon, config);
  const double rate = c1 + drift_norm(spec.local);
  double gap = -std::numeric_limits<double>::infinity();
  for (double t : grid) {
    const auto& tv = t_field.at(t);
    for (std::size_t x = 0; x < tv.size(); ++x) gap = std::max(gap, tv[x] - std::exp(rate * t) * weight[x]);
  }
  return gap;
}

// First moment T_t f(a) of the age-reproduction model on a singleton base
// space: the renewal equation with reproduction map z -> m z.
inline AgeGrid solve_age_moment(const AgeFunction& beta, double m, double lifetime, const AgeFunction& f,
                                double horizon, const AgeGridConfig& cfg = {}) {
  if (!(m >= 0.0)) throw ValidationError("offspring mean must be >= 0");
  return detail::solve_age_volterra(beta, [m](double z) { return m * z; }, lifetime, f, horizon, cfg);
}

}  // namespace superbranch
