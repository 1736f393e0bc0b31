#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"

namespace superbranch {

// Offspring-count law used inside a branching event.
struct CountLaw {
  enum class Kind { Fixed, CriticalBinary, Poisson };
  Kind kind = Kind::Fixed;
  std::uint32_t count = 0;  // Fixed
  double lambda = 0.0;      // Poisson

  static CountLaw fixed(std::uint32_t n) { return {Kind::Fixed, n, 0.0}; }
  static CountLaw critical_binary() { return {Kind::CriticalBinary, 0, 0.0}; }
  static CountLaw poisson(double lambda) { return {Kind::Poisson, 0, lambda}; }

  double mean() const {
    switch (kind) {
      case Kind::Fixed: return static_cast<double>(count);
      case Kind::CriticalBinary: return 1.0;
      case Kind::Poisson: return lambda;
    }
    return 0.0;
  }

  double pmf(std::uint32_t i) const {
    switch (kind) {
      case Kind::Fixed: return i == count ? 1.0 : 0.0;
      case Kind::CriticalBinary: return (i == 0 || i == 2) ? 0.5 : 0.0;
      case Kind::Poisson:
        if (lambda == 0.0) return i == 0 ? 1.0 : 0.0;
        return std::exp(-lambda + i * std::log(lambda) - std::lgamma(i + 1.0));
    }
    return 0.0;
  }

  // g(1 - y) - (1 - y), written to avoid cancellation for small y.
  double pgf_gap(double y) const {
    switch (kind) {
      case Kind::Fixed:
        if (count == 0) return y;
        if (count == 1) return 0.0;
        return (1.0 - y) * std::expm1((count - 1.0) * std::log1p(-y));
      case Kind::CriticalBinary: return 0.5 * (y * y);
      case Kind::Poisson: return std::expm1(-lambda * y) + y;
    }
    return 0.0;
  }

  template <class Rng>
  std::uint32_t sample(Rng& rng) const {
    switch (kind) {
      case Kind::Fixed: return count;
      case Kind::CriticalBinary: return (rng() >> 63) ? 2u : 0u;
      case Kind::Poisson: {
        if (lambda == 0.0) return 0;
        std::poisson_distribution<std::uint32_t> dist(lambda);
        return dist(rng);
      }
    }
    return 0;
  }
};

struct LocalComponent {
  double rate = 0.0;
  CountLaw law;
};

// Offspring law of one non-local mixture component at density k:
// no offspring w.p. q_none, one w.p. q_one, Poisson(k u_j) w.p. n_j / k.
struct NonlocalBranch {
  double weight = 1.0;
  std::vector<double> pi;
  std::vector<double> pi_cumulative;
  double q_none = 0.0;
  double q_one = 0.0;
  std::vector<double> poisson_weight;
  std::vector<double> poisson_mean;

  double total_weight() const {
    double s = q_none + q_one;
    for (double w : poisson_weight) s += w;
    return s;
  }

  double mean() const {
    double m = q_one;
    for (std::size_t j = 0; j < poisson_weight.size(); ++j) m += poisson_weight[j] * poisson_mean[j];
    return m;
  }
};

struct ParticleLaws {
  long k = 1;
  bool rebirth = false;
  std::vector<std::vector<LocalComponent>> local;  // per site
  std::vector<double> alpha;                       // sum of local component rates
  std::vector<double> beta;
  std::vector<std::vector<NonlocalBranch>> nonlocal;

  std::size_t size() const noexcept { return alpha.size(); }
  double gamma(Site x) const { return alpha[x] + beta[x]; }

  // Offspring pmf of local branching at x, i.e. the coefficients of g_k(x, .).
  double local_pmf(Site x, std::uint32_t i) const {
    if (alpha[x] == 0.0) return i == 0 ? 1.0 : 0.0;
    double p = 0.0;
    for (const auto& c : local[x]) p += c.rate / alpha[x] * c.law.pmf(i);
    return p;
  }

  double local_mean(Site x) const {
    if (alpha[x] == 0.0) return 0.0;
    double m = 0.0;
    for (const auto& c : local[x]) m += c.rate / alpha[x] * c.law.mean();
    return m;
  }
};

// Smallest density k at which every construction rate and mixture weight is
// non-negative: jump atoms need k u >= 1, and each non-local component needs
// 1 - d - sum_j n_j / k >= 0.
inline long k_min(const LimitSystemSpec& spec) {
  long km = 1;
  const std::size_t n = spec.size();
  if (!spec.rebirth) {
    for (std::size_t x = 0; x < n; ++x) {
      for (const auto& a : spec.local.atoms[x]) km = std::max(km, static_cast<long>(std::ceil(1.0 / a.u - 1e-12)));
    }
  }
  for (std::size_t x = 0; x < n; ++x) {
    for (const auto& comp : spec.nonlocal.mixture[x]) {
      double total_n = 0.0;
      for (const auto& a : comp.atoms) total_n += a.n;
      if (total_n == 0.0) continue;
      const double room = 1.0 - comp.d;
      if (!(room > 0.0)) {
        throw ValidationError("non-local component with d = 1 cannot carry count atoms");
      }
      km = std::max(km, static_cast<long>(std::ceil(total_n / room - 1e-12)));
    }
  }
  return km;
}

namespace detail {

inline std::vector<double> cumulative(const std::vector<double>& p) {
  std::vector<double> c(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += p[i];
    c[i] = s;
  }
  return c;
}

}  // namespace detail

// Particle-level laws at density k whose phi_k, zeta_k converge to the limit
// mechanisms of `spec`.
//
// Local part, per site:
//   c > 0       critical binary (p0 = p2 = 1/2) at rate 2 k c        -> c z^2 exactly
//   b > 0       pure death at rate b                                  -> b z exactly
//   b < 0       sure binary splitting at rate |b|                     -> b z + |b| z^2 / k
//   atom (u, m) Poisson(k u) offspring at rate m / k, plus pure death
//               at rate m (u - 1/k)                                   -> exact atom term
// Non-local part: h_k(z) = 1 + d (z - 1) + k^-1 sum_j n_j (exp(k u_j (z - 1)) - 1),
// i.e. a mixture of no offspring, one offspring and Poisson(k u_j) offspring.
inline ParticleLaws build_particle_laws(const LimitSystemSpec& spec, long k) {
  spec.validate();
  if (k < 1) throw DensityTooSmall("k must be a positive integer", k, 1);
  const long km = k_min(spec);
  if (k < km) {
    throw DensityTooSmall("non-negativity of pure-death compensator rates m(u - 1/k) and "
                          "no-offspring weights 1 - d - sum n / k",
                          k, km);
  }
  const std::size_t n = spec.size();
  const double kd = static_cast<double>(k);
  ParticleLaws laws;
  laws.k = k;
  laws.rebirth = spec.rebirth;
  laws.local.resize(n);
  laws.alpha.assign(n, 0.0);
  laws.beta = spec.nonlocal.beta;
  laws.nonlocal.resize(n);

  for (std::size_t x = 0; x < n; ++x) {
    if (!spec.rebirth) {
      auto& comps = laws.local[x];
      const double b = spec.local.b[x];
      const double c = spec.local.c[x];
      if (c > 0.0) comps.push_back({2.0 * kd * c, CountLaw::critical_binary()});
      if (b > 0.0) comps.push_back({b, CountLaw::fixed(0)});
      if (b < 0.0) comps.push_back({-b, CountLaw::fixed(2)});
      for (const auto& a : spec.local.atoms[x]) {
        comps.push_back({a.m / kd, CountLaw::poisson(kd * a.u)});
        const double death = a.m * (a.u - 1.0 / kd);
        if (death > 0.0) comps.push_back({death, CountLaw::fixed(0)});
      }
      for (const auto& comp : comps) laws.alpha[x] += comp.rate;
    }

    for (const auto& comp : spec.nonlocal.mixture[x]) {
      NonlocalBranch br;
      br.weight = comp.weight;
      br.pi = comp.pi;
      br.pi_cumulative = detail::cumulative(comp.pi);
      br.q_one = comp.d;
      double poisson_total = 0.0;
      for (const auto& a : comp.atoms) {
        br.poisson_weight.push_back(a.n / kd);
        br.poisson_mean.push_back(kd * a.u);
        poisson_total += a.n / kd;
      }
      br.q_none = 1.0 - comp.d - poisson_total;
      if (br.q_none < -1e-12) {
        throw DensityTooSmall("no-offspring weight 1 - d - sum n / k must be >= 0", k, km);
      }
      br.q_none = std::max(br.q_none, 0.0);
      laws.nonlocal[x].push_back(std::move(br));
    }
  }
  return laws;
}

// phi_k(x, z) = k alpha_k(x) [g_k(x, 1 - z/k) - (1 - z/k)], for 0 <= z <= k.
inline double eval_phi_k(const ParticleLaws& laws, Site x, double z) {
  if (x >= laws.size()) throw DomainError("unknown site index " + std::to_string(x));
  const double kd = static_cast<double>(laws.k);
  if (!(z >= 0.0) || z > kd) throw DomainError("phi_k requires 0 <= z <= k");
  const double y = z / kd;
  double v = 0.0;
  for (const auto& c : laws.local[x]) v += (kd * c.rate) * c.law.pgf_gap(y);
  return v;
}

// zeta_k(x, f) = sum_r w_r k [1 - h_k(x, pi_r, 1 - pi_r(f)/k)], for ||f|| <= k.
inline double eval_zeta_k(const ParticleLaws& laws, Site x, std::span<const double> f) {
  if (x >= laws.size()) throw DomainError("unknown site index " + std::to_string(x));
  if (f.size() != laws.size()) throw DomainError("test function length does not match site count");
  const double kd = static_cast<double>(laws.k);
  for (double v : f) {
    if (!(v >= 0.0) || v > kd) throw DomainError("zeta_k requires 0 <= f <= k");
  }
  double total = 0.0;
  for (const auto& br : laws.nonlocal[x]) {
    double pf = 0.0;
    for (std::size_t y = 0; y < f.size(); ++y) pf += br.pi[y] * f[y];
    const double y = pf / kd;
    double v = br.q_one * pf + kd * (1.0 - br.total_weight());
    for (std::size_t j = 0; j < br.poisson_weight.size(); ++j) {
      v -= kd * br.poisson_weight[j] * std::expm1(-br.poisson_mean[j] * y);
    }
    total += br.weight * v;
  }
  return total;
}

inline double eval_zeta_k(const ParticleLaws& laws, Site x, const TestFunction& f) {
  return eval_zeta_k(laws, x, f.values());
}

}  // namespace superbranch
