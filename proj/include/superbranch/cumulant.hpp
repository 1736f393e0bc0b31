#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/hashing.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/particle_laws.hpp"
#include "superbranch/space.hpp"

namespace superbranch {

enum class SolverMethod { Rk4Ode, PicardMild };

inline std::string to_string(SolverMethod m) { return m == SolverMethod::Rk4Ode ? "rk4-ode" : "picard-mild"; }

inline SolverMethod parse_method(const std::string& s) {
  if (s == "rk4-ode") return SolverMethod::Rk4Ode;
  if (s == "picard-mild") return SolverMethod::PicardMild;
  throw ValidationError("unknown solver method '" + s + "' (expected rk4-ode or picard-mild)");
}

struct SolverConfig {
  double step = 1e-3;
  double picard_tol = 1e-10;
  int picard_max_iter = 500;
  SolverMethod method = SolverMethod::Rk4Ode;

  void validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ValidationError("solver step must be > 0");
    if (!(picard_tol > 0.0)) throw ValidationError("picard_tol must be > 0");
    if (picard_max_iter < 1) throw ValidationError("picard_max_iter must be >= 1");
  }
};

// Values on the uniform grid t_i = i * step; lookups never interpolate.
struct GridField {
  double step = 0.0;
  std::vector<double> times;
  std::vector<std::vector<double>> values;  // [time][site]

  std::size_t index_of(double t) const {
    const double r = t / step;
    const double i = std::round(r);
    if (!(i >= 0.0) || i >= static_cast<double>(times.size()) || std::abs(r - i) > 1e-9) {
      throw LookupError("time " + std::to_string(t) + " is not on the solver grid");
    }
    return static_cast<std::size_t>(i);
  }
  const std::vector<double>& at(double t) const { return values[index_of(t)]; }
  const std::vector<double>& final_values() const { return values.back(); }
  double horizon() const { return times.back(); }
};

struct CumulantField : GridField {
  SolverConfig config;
  std::uint64_t spec_hash = 0;
  std::uint64_t f_hash = 0;
  std::size_t clamped = 0;     // values pulled up from [-10 step^4, 0)
  std::size_t iterations = 0;  // Picard sweeps, 0 for rk4
};

// N(t, v) in dV/dt = QV - N(t, V); writes one value per site into `out`.
using Nonlinearity = std::function<void(double t, std::span<const double> v, std::span<double> out)>;

namespace detail {

inline std::size_t grid_steps(double horizon, double step) {
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be finite and >= 0");
  const double r = horizon / step;
  const double n = std::round(r);
  if (std::abs(r - n) > 1e-9 * std::max(1.0, r)) {
    throw ValidationError("horizon " + std::to_string(horizon) + " is not a multiple of step " + std::to_string(step));
  }
  return static_cast<std::size_t>(n);
}

inline void init_grid(GridField& field, double step, std::size_t n_steps) {
  field.step = step;
  field.times.resize(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) field.times[i] = static_cast<double>(i) * step;
  field.values.assign(n_steps + 1, {});
}

// Clamp machine-scale undershoot; anything deeper is an integrator failure.
inline void enforce_positive(std::vector<double>& v, double step, std::size_t& clamped, double t) {
  const double floor = -10.0 * step * step * step * step;
  for (double& x : v) {
    if (x >= 0.0) continue;
    if (x >= floor) {
      x = 0.0;
      ++clamped;
    } else if (std::isnan(x) || x < floor) {
      throw InstabilityError("solution went negative (" + std::to_string(x) + ") at t=" + std::to_string(t) +
                             "; retry with a smaller step");
    }
  }
}

inline void check_finite(const std::vector<double>& v, double t) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InstabilityError("solution blew up at t=" + std::to_string(t) + "; retry with a smaller step");
  }
}

inline std::vector<double> matvec(const Eigen::MatrixXd& q, std::span<const double> v) {
  Eigen::Map<const Eigen::VectorXd> vm(v.data(), static_cast<Eigen::Index>(v.size()));
  const Eigen::VectorXd r = q * vm;
  return {r.data(), r.data() + r.size()};
}

}  // namespace detail

// Classical fixed-step RK4 for dV/dt = QV - N(t, V), V_0 = f.
inline CumulantField integrate_rk4(const Eigen::MatrixXd& q, std::span<const double> f, double horizon,
                                   const SolverConfig& config, const Nonlinearity& nonlinear) {
  config.validate();
  const std::size_t n_steps = detail::grid_steps(horizon, config.step);
  const std::size_t n = f.size();
  CumulantField field;
  field.config = config;
  field.config.method = SolverMethod::Rk4Ode;
  detail::init_grid(field, config.step, n_steps);
  field.values[0].assign(f.begin(), f.end());

  const double h = config.step;
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n), nl(n), positive(n);
  auto rhs = [&](double t, const std::vector<double>& v, std::vector<double>& out) {
    out = detail::matvec(q, v);
    // stages may undershoot zero; the mechanisms are only defined on z >= 0
    for (std::size_t x = 0; x < n; ++x) positive[x] = std::max(v[x], 0.0);
    nonlinear(t, positive, nl);
    for (std::size_t x = 0; x < n; ++x) out[x] -= nl[x];
  };
  std::vector<double> v = field.values[0];
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = field.times[i];
    rhs(t, v, k1);
    for (std::size_t x = 0; x < n; ++x) tmp[x] = v[x] + 0.5 * h * k1[x];
    rhs(t + 0.5 * h, tmp, k2);
    for (std::size_t x = 0; x < n; ++x) tmp[x] = v[x] + 0.5 * h * k2[x];
    rhs(t + 0.5 * h, tmp, k3);
    for (std::size_t x = 0; x < n; ++x) tmp[x] = v[x] + h * k3[x];
    rhs(t + h, tmp, k4);
    for (std::size_t x = 0; x < n; ++x) v[x] += h / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
    detail::check_finite(v, field.times[i + 1]);
    detail::enforce_positive(v, h, field.clamped, field.times[i + 1]);
    field.values[i + 1] = v;
  }
  return field;
}

// Picard iteration on the mild form
//   V_t = P_t f - int_0^t P_s N(t - s, V_{t-s}) ds,  P_s = exp(sQ),
// with trapezoidal quadrature on the grid, until the sup-norm update < tol.
inline CumulantField integrate_picard(const Eigen::MatrixXd& q, std::span<const double> f, double horizon,
                                      const SolverConfig& config, const Nonlinearity& nonlinear) {
  config.validate();
  const std::size_t n_steps = detail::grid_steps(horizon, config.step);
  const std::size_t n = f.size();
  const auto ni = static_cast<Eigen::Index>(n);
  const double h = config.step;
  CumulantField field;
  field.config = config;
  field.config.method = SolverMethod::PicardMild;
  detail::init_grid(field, h, n_steps);

  // P_{jh} for every lag j
  const Eigen::MatrixXd ph = (h * q).exp();
  std::vector<Eigen::MatrixXd> powers(n_steps + 1);
  powers[0] = Eigen::MatrixXd::Identity(ni, ni);
  for (std::size_t j = 1; j <= n_steps; ++j) powers[j] = powers[j - 1] * ph;

  Eigen::Map<const Eigen::VectorXd> fv(f.data(), ni);
  std::vector<Eigen::VectorXd> free(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) free[i] = powers[i] * fv;

  std::vector<Eigen::VectorXd> v(free);
  std::vector<Eigen::VectorXd> nv(n_steps + 1, Eigen::VectorXd::Zero(ni));
  std::vector<double> scratch(n), positive(n);
  double residual = 0.0;
  for (int iter = 1; iter <= config.picard_max_iter; ++iter) {
    for (std::size_t i = 0; i <= n_steps; ++i) {
      // early iterates may dip below zero; the mechanisms are only defined on z >= 0
      for (std::size_t x = 0; x < n; ++x) positive[x] = std::max(v[i][static_cast<Eigen::Index>(x)], 0.0);
      nonlinear(field.times[i], positive, scratch);
      nv[i] = Eigen::Map<const Eigen::VectorXd>(scratch.data(), ni);
    }
    residual = 0.0;
    for (std::size_t i = 1; i <= n_steps; ++i) {
      // lag j pairs P_{jh} with N at time (i - j) h
      Eigen::VectorXd acc = 0.5 * (powers[0] * nv[i] + powers[i] * nv[0]);
      for (std::size_t j = 1; j < i; ++j) acc.noalias() += powers[j] * nv[i - j];
      Eigen::VectorXd next = free[i] - h * acc;
      residual = std::max(residual, (next - v[i]).cwiseAbs().maxCoeff());
      v[i] = std::move(next);
    }
    field.iterations = static_cast<std::size_t>(iter);
    if (!std::isfinite(residual)) throw InstabilityError("Picard iterate blew up; retry with a smaller step");
    if (residual < config.picard_tol) break;
    if (iter == config.picard_max_iter) {
      throw DivergenceError("Picard iteration did not reach tolerance " + std::to_string(config.picard_tol) +
                                " in " + std::to_string(iter) + " sweeps",
                            residual);
    }
  }
  for (std::size_t i = 0; i <= n_steps; ++i) {
    field.values[i].assign(v[i].data(), v[i].data() + n);
    if (i == 0) field.values[0].assign(f.begin(), f.end());
    detail::enforce_positive(field.values[i], h, field.clamped, field.times[i]);
  }
  return field;
}

inline CumulantField integrate_cumulant(const Eigen::MatrixXd& q, std::span<const double> f, double horizon,
                                        const SolverConfig& config, const Nonlinearity& nonlinear) {
  return config.method == SolverMethod::Rk4Ode ? integrate_rk4(q, f, horizon, config, nonlinear)
                                                : integrate_picard(q, f, horizon, config, nonlinear);
}

inline std::uint64_t hash_spec(const LimitSystemSpec& spec) {
  Fnv1a h;
  for (const auto& l : spec.space.labels()) h.text(l).text("\x1f");
  h.numbers(std::span<const double>(spec.motion.q.data(), static_cast<std::size_t>(spec.motion.q.size())));
  h.numbers(spec.local.b).numbers(spec.local.c);
  for (const auto& atoms : spec.local.atoms) {
    h.number(static_cast<std::uint64_t>(atoms.size()));
    for (const auto& a : atoms) h.number(a.u).number(a.m);
  }
  h.numbers(spec.nonlocal.beta);
  for (const auto& mix : spec.nonlocal.mixture) {
    h.number(static_cast<std::uint64_t>(mix.size()));
    for (const auto& c : mix) {
      h.number(c.weight).numbers(c.pi).number(c.d);
      for (const auto& a : c.atoms) h.number(a.u).number(a.n);
    }
  }
  h.number(static_cast<std::uint64_t>(spec.rebirth));
  return h.value();
}

// N(V) = phi(V) + psi(V) for the limit mechanisms; under rebirth the local
// and non-local linear terms cancel and N(V) = -beta zeta(V).
inline Nonlinearity limit_nonlinearity(const LimitSystemSpec& spec) {
  return [&spec](double, std::span<const double> v, std::span<double> out) {
    const std::size_t n = v.size();
    for (std::size_t x = 0; x < n; ++x) {
      if (spec.rebirth) {
        out[x] = spec.nonlocal.beta[x] == 0.0 ? 0.0 : -spec.nonlocal.beta[x] * eval_zeta(spec.nonlocal, x, v);
      } else {
        const double psi = spec.nonlocal.beta[x] == 0.0 ? 0.0 : eval_psi(spec.nonlocal, x, v);
        out[x] = eval_phi(spec.local, x, v[x]) + psi;
      }
    }
  };
}

// Same with the finite-k mechanisms phi_k, zeta_k of frozen particle laws.
inline Nonlinearity particle_nonlinearity(const ParticleLaws& laws) {
  return [&laws](double, std::span<const double> v, std::span<double> out) {
    const std::size_t n = v.size();
    for (std::size_t x = 0; x < n; ++x) {
      const double zeta = laws.beta[x] == 0.0 ? 0.0 : eval_zeta_k(laws, x, v);
      if (laws.rebirth) {
        out[x] = -laws.beta[x] * zeta;
      } else {
        out[x] = eval_phi_k(laws, x, v[x]) + laws.beta[x] * (v[x] - zeta);
      }
    }
  };
}

inline void check_solver_inputs(const LimitSystemSpec& spec, const TestFunction& f) {
  spec.validate();
  if (f.size() != spec.size()) throw ValidationError("test function length does not match site count");
}

// V_t f on the grid [0, horizon].
inline CumulantField solve_cumulant(const LimitSystemSpec& spec, const TestFunction& f, double horizon,
                                    const SolverConfig& config = {}) {
  check_solver_inputs(spec, f);
  CumulantField field = integrate_cumulant(spec.motion.q, f.values(), horizon, config, limit_nonlinearity(spec));
  field.spec_hash = hash_spec(spec);
  field.f_hash = Fnv1a().numbers(f.values()).value();
  return field;
}

// V_t f with phi, zeta replaced by the density-k mechanisms of `laws`.
inline CumulantField solve_cumulant_k(const ParticleLaws& laws, const LimitSystemSpec& spec, const TestFunction& f,
                                      double horizon, const SolverConfig& config = {}) {
  check_solver_inputs(spec, f);
  if (laws.size() != spec.size()) throw ValidationError("particle laws and spec have different site counts");
  CumulantField field = integrate_cumulant(spec.motion.q, f.values(), horizon, config, particle_nonlinearity(laws));
  field.spec_hash = hash_spec(spec);
  field.f_hash = Fnv1a().numbers(f.values()).value();
  return field;
}

// exp(-mu(V_t f)); t must be a grid time.
inline double laplace_functional(std::span<const double> mu, const GridField& field, double t) {
  const auto& v = field.at(t);
  if (mu.size() != v.size()) throw ValidationError("measure length does not match field");
  return std::exp(-integrate(mu, v));
}

// ||V_{t+s} f - V_t(V_s f)||_inf with one set of engine settings.
inline double semigroup_residual(const LimitSystemSpec& spec, const TestFunction& f, double s, double t,
                                 const SolverConfig& config = {}) {
  if (!(s > 0.0) || !(t > 0.0)) throw ValidationError("semigroup residual needs s, t > 0");
  const CumulantField whole = solve_cumulant(spec, f, s + t, config);
  const CumulantField first = solve_cumulant(spec, f, s, config);
  const CumulantField second = solve_cumulant(spec, TestFunction(first.final_values()), t, config);
  const auto& a = whole.final_values();
  const auto& b = second.final_values();
  double r = 0.0;
  for (std::size_t x = 0; x < a.size(); ++x) r = std::max(r, std::abs(a[x] - b[x]));
  return r;
}

// Controlled immigration: v2 solves the autonomous type-2 equation with its
// own motion; v1 solves dv1/dt = Q1 v1 - phi1(v1) + v2. Under rk4 the type-2
// field is computed at half step so that every RK4 stage reads a grid value.
inline std::pair<CumulantField, CumulantField> solve_controlled_immigration(
    const LimitSystemSpec& spec1, const LimitSystemSpec& spec2, const TestFunction& f1, const TestFunction& f2,
    double horizon, const SolverConfig& config = {}) {
  check_solver_inputs(spec1, f1);
  check_solver_inputs(spec2, f2);
  if (spec1.size() != spec2.size()) throw ValidationError("controlled immigration needs a common base space");
  const std::size_t n_steps = detail::grid_steps(horizon, config.step);
  const bool rk4 = config.method == SolverMethod::Rk4Ode;

  SolverConfig cfg2 = config;
  if (rk4) cfg2.step = config.step / 2.0;
  const CumulantField fine = solve_cumulant(spec2, f2, horizon, cfg2);

  CumulantField v2;
  if (rk4) {
    v2 = fine;
    v2.config = config;
    detail::init_grid(v2, config.step, n_steps);
    for (std::size_t i = 0; i <= n_steps; ++i) v2.values[i] = fine.values[2 * i];
  } else {
    v2 = fine;
  }

  const Nonlinearity base = limit_nonlinearity(spec1);
  Nonlinearity forced = [&](double t, std::span<const double> v, std::span<double> out) {
    base(t, v, out);
    const auto& src = fine.values[fine.index_of(t)];
    for (std::size_t x = 0; x < out.size(); ++x) out[x] -= src[x];
  };
  CumulantField v1 = integrate_cumulant(spec1.motion.q, f1.values(), horizon, config, forced);
  v1.spec_hash = hash_spec(spec1);
  v1.f_hash = Fnv1a().numbers(f1.values()).value();
  return {std::move(v1), std::move(v2)};
}

// phi(x, a, z) for a local mechanism whose parameters depend on mass a.
using MassDependentPhi = std::function<double(Site x, double mass, double z)>;

// Inhomogeneous cumulant V^a_{r,t} f of the mass-a cohort: branching at time s
// uses phi(x, g(s, a), .). Integrated backward from t in the variable
// tau = t - s, so that dW/dtau = QW - phi(x, g(t - tau, a), W), W_0 = f, and
// V^a_{r,t} f = W_{t-r}. The returned grid runs over tau in [0, t - r].
inline CumulantField solve_inhomogeneous_mass(const MotionGenerator& motion, const MassFlow& flow,
                                              const MassDependentPhi& phi, double a0, double r, double t,
                                              const TestFunction& f, const SolverConfig& config = {}) {
  motion.validate(f.size());
  if (!(a0 > 0.0)) throw ValidationError("initial mass must be > 0");
  if (!(r >= 0.0) || !(t >= r)) throw ValidationError("need 0 <= r <= t");
  Nonlinearity nl = [&](double tau, std::span<const double> v, std::span<double> out) {
    const double mass = flow(t - tau, a0);
    for (std::size_t x = 0; x < v.size(); ++x) {
      if (!(v[x] >= 0.0)) throw DomainError("phi requires z >= 0");
      out[x] = phi(x, mass, v[x]);
    }
  };
  CumulantField field = integrate_cumulant(motion.q, f.values(), t - r, config, nl);
  field.f_hash = Fnv1a().numbers(f.values()).value();
  return field;
}

// V_tau f(x, a): the mass-structured solve for a cohort started at mass a, i.e. the
// cohort started at time 0 and read after tau.
inline CumulantField solve_mass_cumulant(const MotionGenerator& motion, const MassFlow& flow,
                                         const MassDependentPhi& phi, double a, double tau, const TestFunction& f,
                                         const SolverConfig& config = {}) {
  return solve_inhomogeneous_mass(motion, flow, phi, a, 0.0, tau, f, config);
}

}  // namespace superbranch
