#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "superbranch/errors.hpp"

namespace superbranch {

using Site = std::size_t;

// Base-space x type factorization of a flattened product space E x I.
// Flattened index of (e, i) is i * |E| + e.
struct Factorization {
  std::vector<std::string> base;
  std::vector<std::string> types;

  std::size_t flat(std::size_t e, std::size_t i) const { return i * base.size() + e; }
  std::size_t base_of(Site s) const { return s % base.size(); }
  std::size_t type_of(Site s) const { return s / base.size(); }
  bool operator==(const Factorization&) const = default;
};

class SiteSpace {
 public:
  SiteSpace() = default;

  explicit SiteSpace(std::vector<std::string> labels,
                     std::optional<Factorization> factorization = std::nullopt)
      : labels_(std::move(labels)), factorization_(std::move(factorization)) {
    if (labels_.empty()) throw ValidationError("site space must be non-empty");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_) {
      if (!seen.insert(l).second) throw ValidationError("duplicate site label '" + l + "'");
    }
    if (factorization_) {
      const auto& f = *factorization_;
      if (f.base.empty() || f.types.empty() || f.base.size() * f.types.size() != labels_.size()) {
        throw ValidationError("factorization size mismatch: |E|*|I| != |sites|");
      }
    }
  }

  // Single site labelled "0" .. "n-1".
  static SiteSpace indexed(std::size_t n) {
    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) labels.push_back(std::to_string(i));
    return SiteSpace(std::move(labels));
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::optional<Factorization>& factorization() const noexcept { return factorization_; }

  Site index_of(const std::string& label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw DomainError("unknown site label '" + label + "'");
    return static_cast<Site>(it - labels_.begin());
  }

  void check(Site s) const {
    if (s >= labels_.size()) throw DomainError("unknown site index " + std::to_string(s));
  }

  bool operator==(const SiteSpace&) const = default;

 private:
  std::vector<std::string> labels_;
  std::optional<Factorization> factorization_;
};

// Non-negative bounded function on a finite site space.
class TestFunction {
 public:
  TestFunction() = default;
  explicit TestFunction(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v) || v < 0.0) throw DomainError("test function values must be finite and >= 0");
    }
  }
  static TestFunction constant(std::size_t n, double v) { return TestFunction(std::vector<double>(n, v)); }
  static TestFunction zero(std::size_t n) { return constant(n, 0.0); }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](Site s) const { return values_[s]; }
  std::span<const double> values() const noexcept { return values_; }
  double sup_norm() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, v);
    return m;
  }

 private:
  std::vector<double> values_;
};

// Finite measure over sites, mu(site) >= 0.
using SiteMeasure = std::vector<double>;

inline double integrate(std::span<const double> mu, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += mu[i] * f[i];
  return s;
}

// Deterministic mass flow g(t, a) = a * exp(growth * t).
struct MassFlow {
  double growth = 0.0;
  double operator()(double t, double a) const { return a * std::exp(growth * t); }
};

struct MotionGenerator {
  Eigen::MatrixXd q;                  // rate matrix, rows sum to zero
  std::optional<MassFlow> mass_flow;  // deterministic mass coordinate
  bool age_flow = false;              // age coordinate advances at unit speed

  static MotionGenerator still(std::size_t n) { return {Eigen::MatrixXd::Zero(n, n), std::nullopt, false}; }

  std::size_t size() const noexcept { return static_cast<std::size_t>(q.rows()); }
  double jump_rate(Site s) const { return -q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)); }

  void validate(std::size_t n) const {
    if (static_cast<std::size_t>(q.rows()) != n || static_cast<std::size_t>(q.cols()) != n) {
      throw ValidationError("q-matrix shape does not match site space");
    }
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (!std::isfinite(q(i, j))) throw ValidationError("q-matrix entries must be finite");
        if (i != j && q(i, j) < 0.0) throw ValidationError("q-matrix off-diagonal entries must be >= 0");
        row += q(i, j);
      }
      if (std::abs(row) > 1e-12) throw ValidationError("q-matrix row " + std::to_string(i) + " does not sum to 0");
    }
  }
};

}  // namespace superbranch
