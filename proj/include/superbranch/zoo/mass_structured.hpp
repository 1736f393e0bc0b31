#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "superbranch/cumulant.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/population.hpp"
#include "superbranch/space.hpp"

namespace superbranch::zoo {

struct MassStructured {
  LimitSystemSpec spec;  // simulation spec: positions on E, mass carried as a flowing coordinate
  MassFlow flow;
  double factor = 1.0;          // offspring mass = parent mass * factor
  double mass_exponent = 0.0;   // phi(x, a, z) = a^exponent * phi_base(x, z)
  MassDependentPhi phi;
};

// Mass-structured system with flow g(t, a) = a exp(growth t). The simulation
// uses mass-independent branching rates; the solver pairing scales the local
// mechanism by a^exponent.
inline MassStructured make_mass_structured(const SiteSpace& space, const Eigen::MatrixXd& q, double factor,
                                           double growth, const LocalMechanism& base,
                                           std::optional<NonlocalMechanism> nonlocal = std::nullopt,
                                           double mass_exponent = 0.0) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw ValidationError("mass factor q must be > 0");
  if (!std::isfinite(growth)) throw ValidationError("mass growth rate must be finite");
  const std::size_t n = space.size();
  MassStructured m{LimitSystemSpec{space, MotionGenerator{q, MassFlow{growth}, false}, base,
                                   nonlocal ? *nonlocal : NonlocalMechanism::none(n)},
                   MassFlow{growth}, factor, mass_exponent, {}};
  m.spec.mass_offspring_factor = factor;
  m.spec.validate();
  const LocalMechanism local = base;
  m.phi = [local, mass_exponent](Site x, double a, double z) {
    return std::pow(a, mass_exponent) * eval_phi(local, x, z);
  };
  return m;
}

namespace detail {

// Correctly rounded running sum (Shewchuk partials), so that an aggregate of n
// equal terms w * m is round(n * w * m) whatever the order.
class ExactSum {
 public:
  void add(double x) {
    std::size_t i = 0;
    for (double y : partials_) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  double value() const {
    if (partials_.empty()) return 0.0;
    auto n = partials_.size() - 1;
    double hi = partials_[n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // half-way correction
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
};

template <class MassOf>
SiteMeasure aggregate_with(const Population& pop, std::size_t n_sites, MassOf mass_of) {
  std::vector<ExactSum> sums(n_sites);
  for (const auto& p : pop.particles) sums[p.site].add(pop.weight * mass_of(p));
  SiteMeasure y(n_sites, 0.0);
  for (std::size_t x = 0; x < n_sites; ++x) y[x] = sums[x].value();
  return y;
}

}  // namespace detail

// Y(x) = sum over particles at x of weight * mass, correctly rounded.
inline SiteMeasure aggregate_mass(const Population& pop, std::size_t n_sites) {
  return detail::aggregate_with(pop, n_sites, [](const Particle& p) { return p.mass; });
}

// Same aggregate with each mass recomputed as g(t - birth_time, birth_mass).
inline SiteMeasure aggregate_mass_from_birth(const Population& pop, std::size_t n_sites, const MassFlow& flow) {
  return detail::aggregate_with(pop, n_sites,
                                [&](const Particle& p) { return flow(pop.time - p.birth_time, p.birth_mass); });
}

}  // namespace superbranch::zoo
