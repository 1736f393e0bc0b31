#pragma once

#include <Eigen/Dense>

#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/space.hpp"

namespace superbranch::zoo {

// Rebirth system: the parent survives each non-local branch, so the local
// mechanism is forced to phi(x, z) = -beta(x) z.
inline LimitSystemSpec make_rebirth(const SiteSpace& space, const Eigen::MatrixXd& q, const std::vector<double>& beta,
                                    std::vector<std::vector<MixtureComponent>> mixture) {
  const std::size_t n = space.size();
  if (beta.size() != n) throw ValidationError("beta table does not match site count");
  LimitSystemSpec spec{space, MotionGenerator{q, std::nullopt, false}, LocalMechanism::zero(n),
                       NonlocalMechanism{beta, std::move(mixture)}};
  spec.rebirth = true;
  for (std::size_t x = 0; x < n; ++x) spec.local.b[x] = -beta[x];
  spec.validate();
  return spec;
}

// Variant that checks a caller-supplied local mechanism against the forced one.
inline LimitSystemSpec make_rebirth(const SiteSpace& space, const Eigen::MatrixXd& q, const std::vector<double>& beta,
                                    std::vector<std::vector<MixtureComponent>> mixture, const LocalMechanism& local) {
  LimitSystemSpec spec = make_rebirth(space, q, beta, std::move(mixture));
  if (!(local == spec.local)) {
    throw ValidationError("rebirth requires the local mechanism b = -beta, c = 0, no atoms");
  }
  return spec;
}

}  // namespace superbranch::zoo
