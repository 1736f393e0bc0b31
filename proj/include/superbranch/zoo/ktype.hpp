#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/space.hpp"

namespace superbranch::zoo {

// Single-type ingredients on the common base space E.
struct TypeComponents {
  Eigen::MatrixXd q;
  LocalMechanism local;
  NonlocalMechanism nonlocal;
};

// Flattens a kappa-type system onto E x {1..kappa} (index i * |E| + e).
// Motion is block diagonal in the type; a non-local branch of type i at x
// places offspring at (y, j) with probability pi_r(y) p^(i)_j, so a type-i
// component with pi_r = delta_x only changes the type.
inline LimitSystemSpec make_ktype(const SiteSpace& base, const std::vector<TypeComponents>& types,
                                  const std::vector<std::vector<double>>& transition) {
  const std::size_t kappa = types.size();
  const std::size_t ne = base.size();
  if (kappa < 1) throw ValidationError("need at least one type");
  if (transition.size() != kappa) throw ValidationError("need one type-transition pmf per type");
  for (const auto& p : transition) {
    if (p.size() != kappa) throw ValidationError("type-transition pmf has wrong length");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ValidationError("type-transition probabilities must be >= 0");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValidationError("type-transition pmf does not sum to 1");
  }
  for (const auto& t : types) {
    if (static_cast<std::size_t>(t.q.rows()) != ne || static_cast<std::size_t>(t.q.cols()) != ne) {
      throw ValidationError("per-type q-matrix does not match base space");
    }
    t.local.validate(ne);
    t.nonlocal.validate(ne);
  }

  std::vector<std::string> labels;
  std::vector<std::string> type_labels;
  for (std::size_t i = 0; i < kappa; ++i) type_labels.push_back(std::to_string(i + 1));
  for (std::size_t i = 0; i < kappa; ++i) {
    for (const auto& l : base.labels()) labels.push_back(kappa == 1 ? l : l + ":" + type_labels[i]);
  }
  const std::size_t n = ne * kappa;
  LimitSystemSpec spec{SiteSpace(std::move(labels), Factorization{base.labels(), type_labels}),
                       MotionGenerator::still(n),
                       LocalMechanism::zero(n),
                       NonlocalMechanism::none(n)};

  for (std::size_t i = 0; i < kappa; ++i) {
    const auto& t = types[i];
    const auto off = static_cast<Eigen::Index>(i * ne);
    const auto ni = static_cast<Eigen::Index>(ne);
    spec.motion.q.block(off, off, ni, ni) = t.q;
    for (std::size_t e = 0; e < ne; ++e) {
      const std::size_t s = i * ne + e;
      spec.local.b[s] = t.local.b[e];
      spec.local.c[s] = t.local.c[e];
      spec.local.atoms[s] = t.local.atoms[e];
      spec.nonlocal.beta[s] = t.nonlocal.beta[e];
      spec.nonlocal.mixture[s].clear();
      for (const auto& comp : t.nonlocal.mixture[e]) {
        MixtureComponent flat{comp.weight, std::vector<double>(n, 0.0), comp.d, comp.atoms};
        for (std::size_t j = 0; j < kappa; ++j) {
          for (std::size_t y = 0; y < ne; ++y) flat.pi[j * ne + y] = comp.pi[y] * transition[i][j];
        }
        spec.nonlocal.mixture[s].push_back(std::move(flat));
      }
    }
  }
  spec.validate();
  return spec;
}

}  // namespace superbranch::zoo
