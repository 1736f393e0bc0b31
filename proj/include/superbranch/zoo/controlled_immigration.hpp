#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/space.hpp"
#include "superbranch/zoo/ktype.hpp"

namespace superbranch::zoo {

struct ControlledImmigration {
  LimitSystemSpec type1;      // motion 1, phi1, no non-local branching
  LimitSystemSpec type2;      // motion 2, phi2, no non-local branching
  LimitSystemSpec flattened;  // two-type system on E x {1, 2}
};

// Type-1 mass feeds type-2 immigration. In the two-type system each type-1
// particle turns into a type-2 particle at unit rate (beta = 1, d = 1, same
// position); the local mechanism of type 1 becomes phi1(z) - z to compensate.
inline ControlledImmigration make_controlled_immigration(const SiteSpace& base, const Eigen::MatrixXd& q1,
                                                         const Eigen::MatrixXd& q2, const LocalMechanism& phi1,
                                                         const LocalMechanism& phi2) {
  const std::size_t n = base.size();
  phi1.validate(n);
  phi2.validate(n);
  ControlledImmigration out{
      LimitSystemSpec{base, MotionGenerator{q1, std::nullopt, false}, phi1, NonlocalMechanism::none(n)},
      LimitSystemSpec{base, MotionGenerator{q2, std::nullopt, false}, phi2, NonlocalMechanism::none(n)},
      {}};
  out.type1.validate();
  out.type2.validate();

  LocalMechanism shifted = phi1;
  for (std::size_t x = 0; x < n; ++x) {
    shifted.b[x] -= 1.0;
    if (!std::isfinite(shifted.b[x])) throw ValidationError("phi1(z) - z is not representable");
  }
  NonlocalMechanism to_type2 = NonlocalMechanism::none(n);
  for (double& b : to_type2.beta) b = 1.0;
  out.flattened = make_ktype(base, {TypeComponents{q1, shifted, to_type2}, TypeComponents{q2, phi2, NonlocalMechanism::none(n)}},
                             {{0.0, 1.0}, {0.0, 1.0}});
  return out;
}

}  // namespace superbranch::zoo
