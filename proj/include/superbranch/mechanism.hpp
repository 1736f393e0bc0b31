#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/space.hpp"

namespace superbranch {

// Jump atom of the local Levy measure m(x, du): mass u with intensity m.
struct LocalAtom {
  double u = 0.0;
  double m = 0.0;
  bool operator==(const LocalAtom&) const = default;
};

// Atom of the displaced-offspring measure n(x, pi, du).
struct CountAtom {
  double u = 0.0;
  double n = 0.0;
  bool operator==(const CountAtom&) const = default;
};

// phi(x, z) = b z + c z^2 + sum_j m_j (exp(-z u_j) - 1 + z u_j), tabulated per site.
struct LocalMechanism {
  std::vector<double> b;
  std::vector<double> c;
  std::vector<std::vector<LocalAtom>> atoms;

  static LocalMechanism zero(std::size_t n) {
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<std::vector<LocalAtom>>(n)};
  }

  std::size_t size() const noexcept { return b.size(); }

  void validate(std::size_t n) const {
    if (b.size() != n || c.size() != n || atoms.size() != n) {
      throw ValidationError("local mechanism tables do not match site count");
    }
    for (std::size_t x = 0; x < n; ++x) {
      if (!std::isfinite(b[x]) || !std::isfinite(c[x])) throw ValidationError("local mechanism values must be finite");
      if (c[x] < 0.0) throw ValidationError("diffusion coefficient c must be >= 0");
      for (const auto& a : atoms[x]) {
        if (!(a.u > 0.0) || !(a.m > 0.0) || !std::isfinite(a.u) || !std::isfinite(a.m)) {
          throw ValidationError("local jump atoms need u > 0 and m > 0");
        }
      }
    }
  }

  bool operator==(const LocalMechanism&) const = default;
};

// One entry of the finite mixture G(x, d pi).
struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> pi;  // displacement distribution over sites
  double d = 0.0;          // deterministic single-offspring part
  std::vector<CountAtom> atoms;

  // d + sum_j u_j n_j: mean displaced offspring mass per unit pi
  double mean_mass() const {
    double s = d;
    for (const auto& a : atoms) s += a.u * a.n;
    return s;
  }

  bool operator==(const MixtureComponent&) const = default;
};

struct NonlocalMechanism {
  std::vector<double> beta;
  std::vector<std::vector<MixtureComponent>> mixture;

  static NonlocalMechanism none(std::size_t n) {
    NonlocalMechanism nl;
    nl.beta.assign(n, 0.0);
    nl.mixture.resize(n);
    for (std::size_t x = 0; x < n; ++x) {
      std::vector<double> delta(n, 0.0);
      delta[x] = 1.0;
      nl.mixture[x].push_back({1.0, std::move(delta), 1.0, {}});
    }
    return nl;
  }

  std::size_t size() const noexcept { return beta.size(); }

  void check_weights(Site x) const {
    double s = 0.0;
    for (const auto& comp : mixture[x]) s += comp.weight;
    if (mixture[x].empty() || std::abs(s - 1.0) > 1e-12) {
      throw ValidationError("mixture weights at site " + std::to_string(x) + " do not sum to 1");
    }
  }

  void validate(std::size_t n) const {
    if (beta.size() != n || mixture.size() != n) throw ValidationError("non-local tables do not match site count");
    for (std::size_t x = 0; x < n; ++x) {
      if (!std::isfinite(beta[x]) || beta[x] < 0.0) throw ValidationError("beta must be finite and >= 0");
      check_weights(x);
      for (const auto& comp : mixture[x]) {
        if (!(comp.weight >= 0.0)) throw ValidationError("mixture weights must be >= 0");
        if (comp.pi.size() != n) throw ValidationError("displacement distribution has wrong length");
        double ps = 0.0;
        for (double p : comp.pi) {
          if (!(p >= 0.0)) throw ValidationError("displacement probabilities must be >= 0");
          ps += p;
        }
        if (std::abs(ps - 1.0) > 1e-12) throw ValidationError("displacement distribution does not sum to 1");
        if (comp.d < 0.0 || comp.d > 1.0) throw ValidationError("deterministic part d must lie in [0,1]");
        for (const auto& a : comp.atoms) {
          if (!(a.u > 0.0) || !(a.n > 0.0)) throw ValidationError("count atoms need u > 0 and n > 0");
        }
        if (comp.mean_mass() > 1.0 + 1e-12) {
          throw ValidationError("subcriticality violated: d + sum u n > 1 at site " + std::to_string(x));
        }
      }
    }
  }

  bool operator==(const NonlocalMechanism&) const = default;
};

struct AgeConfig {
  double lifetime = std::numeric_limits<double>::infinity();
  bool track_reproduction = true;
};

// Multiplier on the branching rate as a function of the flowing coordinates,
// realized in simulation by thinning against `bound`.
struct RateModifier {
  std::function<double(double age, double mass)> factor;
  double bound = 1.0;
};

struct LimitSystemSpec {
  SiteSpace space;
  MotionGenerator motion;
  LocalMechanism local;
  NonlocalMechanism nonlocal;
  bool rebirth = false;
  std::optional<AgeConfig> age;
  double mass_offspring_factor = 1.0;
  std::optional<RateModifier> rate_modifier;

  LimitSystemSpec() = default;
  LimitSystemSpec(SiteSpace s, MotionGenerator m, LocalMechanism l, NonlocalMechanism nl)
      : space(std::move(s)), motion(std::move(m)), local(std::move(l)), nonlocal(std::move(nl)) {}

  std::size_t size() const noexcept { return space.size(); }

  void validate() const {
    const std::size_t n = space.size();
    if (n == 0) throw ValidationError("empty site space");
    motion.validate(n);
    local.validate(n);
    nonlocal.validate(n);
    if (rebirth) {
      for (std::size_t x = 0; x < n; ++x) {
        if (local.b[x] != -nonlocal.beta[x] || local.c[x] != 0.0 || !local.atoms[x].empty()) {
          throw ValidationError("rebirth requires local mechanism b = -beta, c = 0, no atoms");
        }
      }
    }
    if (motion.age_flow != age.has_value()) throw ValidationError("age flow and age config must be set together");
    if (age && !(age->lifetime > 0.0)) throw ValidationError("lifetime must be > 0");
    if (!(mass_offspring_factor > 0.0)) throw ValidationError("mass offspring factor must be > 0");
    if (rate_modifier && (!rate_modifier->factor || !(rate_modifier->bound > 0.0))) {
      throw ValidationError("rate modifier needs a callable and a positive bound");
    }
  }
};

inline double eval_phi(const LocalMechanism& local, Site x, double z) {
  if (x >= local.size()) throw DomainError("unknown site index " + std::to_string(x));
  if (!(z >= 0.0)) throw DomainError("phi requires z >= 0");
  double v = local.b[x] * z + local.c[x] * (z * z);
  for (const auto& a : local.atoms[x]) v += a.m * (std::expm1(-z * a.u) + z * a.u);
  return v;
}

namespace detail {

inline double pi_of(const std::vector<double>& pi, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t y = 0; y < pi.size(); ++y) s += pi[y] * f[y];
  return s;
}

inline void check_function(const NonlocalMechanism& nl, Site x, std::span<const double> f) {
  if (x >= nl.size()) throw DomainError("unknown site index " + std::to_string(x));
  if (f.size() != nl.size()) throw DomainError("test function length does not match site count");
  for (double v : f) {
    if (!(v >= 0.0)) throw DomainError("test function must be >= 0");
  }
  nl.check_weights(x);
}

}  // namespace detail

inline double eval_zeta(const NonlocalMechanism& nl, Site x, std::span<const double> f) {
  detail::check_function(nl, x, f);
  double total = 0.0;
  for (const auto& comp : nl.mixture[x]) {
    const double pf = detail::pi_of(comp.pi, f);
    double v = comp.d * pf;
    for (const auto& a : comp.atoms) v -= a.n * std::expm1(-a.u * pf);
    total += comp.weight * v;
  }
  return total;
}

inline double eval_zeta(const NonlocalMechanism& nl, Site x, const TestFunction& f) {
  return eval_zeta(nl, x, f.values());
}

inline double eval_psi(const NonlocalMechanism& nl, Site x, std::span<const double> f) {
  return nl.beta[x] * (f[x] - eval_zeta(nl, x, f));
}

inline double eval_psi(const NonlocalMechanism& nl, Site x, const TestFunction& f) {
  return eval_psi(nl, x, f.values());
}

// Linearization of zeta at 0: sum_r w_r (d_r + sum_j u n) pi_r(f).
inline double eval_mean_kernel(const NonlocalMechanism& nl, Site x, std::span<const double> f) {
  detail::check_function(nl, x, f);
  double total = 0.0;
  for (const auto& comp : nl.mixture[x]) total += comp.weight * comp.mean_mass() * detail::pi_of(comp.pi, f);
  return total;
}

inline double eval_mean_kernel(const NonlocalMechanism& nl, Site x, const TestFunction& f) {
  return eval_mean_kernel(nl, x, f.values());
}

// Dense matrix M with (M f)(x) = eval_mean_kernel(x, f).
inline Eigen::MatrixXd mean_kernel_matrix(const NonlocalMechanism& nl) {
  const auto n = static_cast<Eigen::Index>(nl.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (const auto& comp : nl.mixture[static_cast<std::size_t>(x)]) {
      const double scale = comp.weight * comp.mean_mass();
      for (Eigen::Index y = 0; y < n; ++y) m(x, y) += scale * comp.pi[static_cast<std::size_t>(y)];
    }
  }
  return m;
}

inline double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace superbranch
