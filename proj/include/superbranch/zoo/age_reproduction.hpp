#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "superbranch/age.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/space.hpp"

namespace superbranch::zoo {

struct AgeReproduction {
  LimitSystemSpec spec;
  AgeFunction beta;       // branching rate by age
  double beta_bound = 0.0;
  AgeFunction zeta;       // scalar offspring map z -> d z + sum n (1 - exp(-u z))
  double offspring_mean = 0.0;
  double lifetime = 0.0;
};

// Rebirth system with ageing particles: the parent keeps its age and counts
// one more branch; offspring start at age 0 where the parent stands. Particles
// are removed at age `lifetime`. The age-dependent rate is realized by
// thinning against beta_bound.
inline AgeReproduction make_age_reproduction(const SiteSpace& space, const Eigen::MatrixXd& q, AgeFunction beta,
                                             double beta_bound, double d, std::vector<CountAtom> atoms,
                                             double lifetime) {
  if (!(lifetime > 0.0)) throw ValidationError("lifetime L must be > 0");
  if (!(beta_bound >= 0.0) || !std::isfinite(beta_bound)) throw ValidationError("rate bound must be finite and >= 0");
  if (!beta) throw ValidationError("age-dependent rate is required");
  const std::size_t n = space.size();
  NonlocalMechanism nl = NonlocalMechanism::none(n);
  for (std::size_t x = 0; x < n; ++x) {
    nl.beta[x] = beta_bound;
    nl.mixture[x][0].d = d;
    nl.mixture[x][0].atoms = atoms;
  }
  LocalMechanism local = LocalMechanism::zero(n);
  for (std::size_t x = 0; x < n; ++x) local.b[x] = -beta_bound;

  AgeReproduction m;
  m.spec = LimitSystemSpec{space, MotionGenerator{q, std::nullopt, true}, local, nl};
  m.spec.rebirth = true;
  m.spec.age = AgeConfig{lifetime, true};
  if (beta_bound > 0.0) {
    m.spec.rate_modifier = RateModifier{[beta, beta_bound](double age, double) { return beta(age) / beta_bound; }, 1.0};
  }
  m.spec.validate();
  m.beta = std::move(beta);
  m.beta_bound = beta_bound;
  m.zeta = [d, atoms](double z) {
    double v = d * z;
    for (const auto& a : atoms) v -= a.n * std::expm1(-a.u * z);
    return v;
  };
  m.offspring_mean = nl.mixture[0][0].mean_mass();
  m.lifetime = lifetime;
  return m;
}

}  // namespace superbranch::zoo
