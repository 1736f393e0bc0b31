#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "superbranch/errors.hpp"

namespace superbranch {

using AgeFunction = std::function<double(double)>;

struct AgeGridConfig {
  double step = 1e-3;      // time and quadrature step
  double age_step = 0.0;   // spacing of stored ages, a multiple of step; 0 means step
  double fixed_point_tol = 1e-15;
  int fixed_point_max_iter = 200;
};

// Solution values on (t, a) for a singleton base space with deterministic ageing.
struct AgeGrid {
  double step = 0.0;
  double age_step = 0.0;
  double lifetime = std::numeric_limits<double>::infinity();
  std::vector<double> times;
  std::vector<double> ages;
  std::vector<std::vector<double>> values;  // [time][age]

  std::size_t time_index(double t) const { return index(t, step, times.size(), "time"); }
  std::size_t age_index(double a) const { return index(a, age_step, ages.size(), "age"); }
  double at(double t, double a) const { return values[time_index(t)][age_index(a)]; }

 private:
  static std::size_t index(double v, double h, std::size_t n, const char* what) {
    const double r = v / h;
    const double i = std::round(r);
    if (!(i >= 0.0) || i >= static_cast<double>(n) || std::abs(r - i) > 1e-9) {
      throw LookupError(std::string(what) + " " + std::to_string(v) + " is not on the age grid");
    }
    return static_cast<std::size_t>(i);
  }
};

namespace detail {

inline std::size_t commensurate(double length, double h, const char* what) {
  const double r = length / h;
  const double n = std::round(r);
  if (!(n >= 0.0) || std::abs(r - n) > 1e-9 * std::max(1.0, r)) {
    throw ValidationError(std::string(what) + " " + std::to_string(length) + " is not a multiple of grid step " +
                          std::to_string(h));
  }
  return static_cast<std::size_t>(n);
}

// Renewal equation along the age characteristics, with reproduction map R:
//   V_t(a) = f(a + t) 1{a + t < L} + int_0^{(L - a) ^ t} beta(a + s) R(V_{t-s}(0)) ds.
// V_t(0) is solved first (a Volterra equation, trapezoid rule, implicit in its
// newest term); V_t(a) then follows by quadrature.
inline AgeGrid solve_age_volterra(const AgeFunction& beta, const AgeFunction& reproduce, double lifetime,
                                  const AgeFunction& f, double horizon, const AgeGridConfig& cfg) {
  if (!(cfg.step > 0.0)) throw ValidationError("age grid step must be > 0");
  if (!(lifetime > 0.0)) throw ValidationError("lifetime must be > 0");
  const double h = cfg.step;
  const double age_step = cfg.age_step > 0.0 ? cfg.age_step : h;
  const std::size_t nt = commensurate(horizon, h, "horizon");
  const std::size_t stride = commensurate(age_step, h, "age step");
  if (stride == 0) throw ValidationError("age step must be >= step");
  const bool finite_life = std::isfinite(lifetime);
  const std::size_t nl = finite_life ? commensurate(lifetime, h, "lifetime") : std::numeric_limits<std::size_t>::max();
  const double age_span = finite_life ? lifetime : horizon;
  const std::size_t na = commensurate(age_span, age_step, "age range");

  auto checked_beta = [&](double a) {
    const double b = beta(a);
    if (!(b >= 0.0) || !std::isfinite(b)) throw DomainError("age-dependent rate must be finite and >= 0");
    return b;
  };
  auto alive = [&](std::size_t age_index) { return !finite_life || age_index < nl; };

  AgeGrid grid;
  grid.step = h;
  grid.age_step = age_step;
  grid.lifetime = lifetime;
  grid.times.resize(nt + 1);
  for (std::size_t i = 0; i <= nt; ++i) grid.times[i] = static_cast<double>(i) * h;
  grid.ages.resize(na + 1);
  for (std::size_t j = 0; j <= na; ++j) grid.ages[j] = static_cast<double>(j * stride) * h;

  // beta on every age node a + s reached by the quadrature
  const std::size_t max_node = finite_life ? nl : nt + na * stride;
  std::vector<double> beta_at(max_node + 1);
  for (std::size_t l = 0; l <= max_node; ++l) beta_at[l] = checked_beta(static_cast<double>(l) * h);

  std::vector<double> w(nt + 1), rw(nt + 1);
  for (std::size_t i = 0; i <= nt; ++i) {
    const double free = alive(i) ? f(static_cast<double>(i) * h) : 0.0;
    const std::size_t m = std::min(i, nl);
    double explicit_part = 0.0;
    for (std::size_t l = 1; l <= m; ++l) {
      const double c = (l == m) ? 0.5 : 1.0;
      explicit_part += c * beta_at[l] * rw[i - l];
    }
    const double c0 = m == 0 ? 0.0 : 0.5;
    double v = free + h * explicit_part;
    if (c0 > 0.0 && beta_at[0] > 0.0) {
      for (int it = 0;; ++it) {
        const double next = free + h * (explicit_part + c0 * beta_at[0] * reproduce(v));
        const double diff = std::abs(next - v);
        v = next;
        if (diff <= cfg.fixed_point_tol * std::max(1.0, std::abs(v))) break;
        if (it >= cfg.fixed_point_max_iter) {
          throw DivergenceError("age renewal fixed point did not converge at t=" + std::to_string(i * h), diff);
        }
      }
    }
    if (!std::isfinite(v)) throw InstabilityError("age renewal blew up; retry with a smaller step");
    w[i] = v;
    rw[i] = reproduce(v);
  }

  grid.values.assign(nt + 1, std::vector<double>(na + 1, 0.0));
  for (std::size_t i = 0; i <= nt; ++i) {
    grid.values[i][0] = w[i];
    for (std::size_t j = 1; j <= na; ++j) {
      const std::size_t a = j * stride;  // age in units of h
      const double free = alive(a + i) ? f(static_cast<double>(a + i) * h) : 0.0;
      const std::size_t room = finite_life ? nl - std::min(nl, a) : std::numeric_limits<std::size_t>::max();
      const std::size_t m = std::min(i, room);
      double integral = 0.0;
      for (std::size_t l = 0; l <= m && m > 0; ++l) {
        const double c = (l == 0 || l == m) ? 0.5 : 1.0;
        integral += c * beta_at[a + l] * rw[i - l];
      }
      grid.values[i][j] = free + h * integral;
    }
  }
  return grid;
}

}  // namespace detail

// Cumulant V_t f(a) of the age-reproduction model on a singleton base space
// with deterministic lifetime L (possibly infinite) and scalar offspring map zeta.
inline AgeGrid solve_age_renewal(const AgeFunction& beta, const AgeFunction& zeta, double lifetime,
                                 const AgeFunction& f, double horizon, const AgeGridConfig& cfg = {}) {
  AgeGrid g = detail::solve_age_volterra(beta, zeta, lifetime, f, horizon, cfg);
  for (const auto& row : g.values) {
    for (double v : row) {
      if (v < 0.0) throw InstabilityError("age renewal produced a negative value");
    }
  }
  return g;
}

}  // namespace superbranch
