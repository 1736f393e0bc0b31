#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "superbranch/errors.hpp"

namespace superbranch {

struct Summary {
  double mean = 0.0;
  double variance = 0.0;  // sample variance, N - 1 denominator
  double std_error = 0.0;
  std::size_t n = 0;
};

// Welford accumulator with Chan's pairwise merge; mergeable partial summaries.
class Accumulator {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  void merge(const Accumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double n = na + nb;
    const double delta = other.mean_ - mean_;
    mean_ += delta * nb / n;
    m2_ += other.m2_ + delta * delta * na * nb / n;
    n_ += other.n_;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }

  Summary summary() const {
    if (n_ < 2) throw DomainError("variance undefined for fewer than 2 samples");
    Summary s;
    s.n = n_;
    s.mean = mean_;
    s.variance = std::max(0.0, m2_ / static_cast<double>(n_ - 1));
    s.std_error = std::sqrt(s.variance / static_cast<double>(n_));
    return s;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

namespace detail {

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace detail

// Mean, sample variance and standard error in one pass over data shifted by
// the first sample, with compensated sums.
inline Summary summarize(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw DomainError("variance undefined for fewer than 2 samples");
  const double shift = samples[0];
  detail::CompensatedSum s1, s2;
  for (double x : samples) {
    const double d = x - shift;
    s1.add(d);
    s2.add(d * d);
  }
  const double nd = static_cast<double>(n);
  Summary s;
  s.n = n;
  s.mean = shift + s1.value() / nd;
  s.variance = std::max(0.0, (s2.value() - s1.value() * s1.value() / nd) / (nd - 1.0));
  s.std_error = std::sqrt(s.variance / nd);
  return s;
}

struct ExperimentResult {
  std::vector<double> values;  // per-replicate functional values
  Summary summary;
  double reference = 0.0;
  std::string reference_tag;  // where the reference value comes from
  double z_score = 0.0;       // 0 when stderr is 0

  static ExperimentResult from(std::vector<double> values, double reference, std::string tag) {
    ExperimentResult r;
    r.summary = summarize(values);
    r.values = std::move(values);
    r.reference = reference;
    r.reference_tag = std::move(tag);
    r.z_score = r.summary.std_error > 0.0 ? (r.summary.mean - reference) / r.summary.std_error : 0.0;
    return r;
  }
};

struct Verdict {
  bool pass = false;
  double margin = 0.0;  // allowance minus |mean - reference|; >= 0 iff pass
};

inline Verdict compare(double mean, double std_error, double reference, double sigma_budget, double bias_budget) {
  const double allowance = sigma_budget * std_error + bias_budget;
  const double gap = std::abs(mean - reference);
  return {gap <= allowance, allowance - gap};
}

inline Verdict compare(const ExperimentResult& r, double reference, double sigma_budget, double bias_budget) {
  return compare(r.summary.mean, r.summary.std_error, reference, sigma_budget, bias_budget);
}

struct ConvergenceRow {
  long k = 0;
  double gap = 0.0;
  double std_error = 0.0;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  std::optional<double> slope;  // empty when indeterminate
  std::size_t resolved = 0;     // rows with |gap| > 2 stderr
};

// Least-squares slope of log|gap| against log k over rows whose gap is
// resolved (|gap| > 2 stderr); needs at least three distinct k.
inline ConvergenceReport convergence_report(std::vector<ConvergenceRow> rows) {
  ConvergenceReport rep;
  rep.rows = std::move(rows);
  std::vector<double> xs, ys;
  for (const auto& r : rep.rows) {
    if (r.k <= 0 || !(std::abs(r.gap) > 2.0 * r.std_error) || r.gap == 0.0) continue;
    bool duplicate = false;
    for (double x : xs) duplicate = duplicate || x == std::log(static_cast<double>(r.k));
    if (duplicate) continue;
    xs.push_back(std::log(static_cast<double>(r.k)));
    ys.push_back(std::log(std::abs(r.gap)));
  }
  rep.resolved = xs.size();
  if (xs.size() < 3) return rep;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  rep.slope = sxy / sxx;
  return rep;
}

}  // namespace superbranch
