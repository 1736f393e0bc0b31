#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "superbranch/engine.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/particle_laws.hpp"
#include "superbranch/rng.hpp"
#include "superbranch/space.hpp"

namespace superbranch::zoo {

// Integer counts of level-1 individuals over the sites of S.
using SubPopulation = std::vector<std::uint64_t>;

inline std::uint64_t total(const SubPopulation& mu) {
  std::uint64_t s = 0;
  for (auto c : mu) s += c;
  return s;
}

struct Level2Mechanism {
  enum class Kind { EmpiricalSample, Restriction };
  Kind kind = Kind::EmpiricalSample;
  CountLaw extra_samples = CountLaw::fixed(1);  // sample size N = 1 + draw
  std::vector<bool> subset;                     // B, for restriction

  static Level2Mechanism empirical_sample(CountLaw extra = CountLaw::fixed(1)) {
    return {Kind::EmpiricalSample, extra, {}};
  }
  static Level2Mechanism restriction(std::vector<bool> b) { return {Kind::Restriction, CountLaw::fixed(0), std::move(b)}; }
};

inline const char* to_string(Level2Mechanism::Kind k) {
  return k == Level2Mechanism::Kind::EmpiricalSample ? "empirical-sample" : "restriction";
}

struct MultilevelSpec {
  SiteSpace islands;
  Eigen::MatrixXd island_q;  // migration of whole sub-populations
  SiteSpace s_space;
  Eigen::MatrixXd s_q;       // motion of level-1 individuals within S
  double level1_rate = 1.0;
  CountLaw level1_law = CountLaw::critical_binary();
  double level2_beta = 1.0;
  Level2Mechanism mechanism;
  CountLaw level2_offspring = CountLaw::fixed(1);

  void validate() const {
    MotionGenerator{island_q, std::nullopt, false}.validate(islands.size());
    MotionGenerator{s_q, std::nullopt, false}.validate(s_space.size());
    if (!(level1_rate >= 0.0) || !std::isfinite(level1_rate)) throw ValidationError("level-1 rate must be >= 0");
    if (!(level2_beta >= 0.0) || !std::isfinite(level2_beta)) throw ValidationError("level-2 rate must be >= 0");
    if (mechanism.kind == Level2Mechanism::Kind::Restriction && mechanism.subset.size() != s_space.size()) {
      throw ValidationError("restriction subset must have one flag per site of S");
    }
  }
};

// Level-1 branching defaults to critical binary; it is a parameter.
inline MultilevelSpec make_multilevel(SiteSpace islands, Eigen::MatrixXd island_q, SiteSpace s_space,
                                      Eigen::MatrixXd s_q, double level1_rate, CountLaw level1_law,
                                      double level2_beta, Level2Mechanism mechanism,
                                      CountLaw level2_offspring = CountLaw::fixed(1)) {
  MultilevelSpec spec{std::move(islands), std::move(island_q), std::move(s_space), std::move(s_q), level1_rate,
                      level1_law, level2_beta, std::move(mechanism), level2_offspring};
  spec.validate();
  return spec;
}

// One offspring sub-population drawn from the level-2 mechanism; empty when a
// restriction leaves nothing (the offspring is then suppressed).
//   empirical sample: N = 1 + draw, Z_1..Z_N iid from mu / mu(S), and the
//     mu(S) individuals are spread over Z_1..Z_N by a uniform multinomial,
//     so the total count is conserved exactly;
//   restriction: mu_B(A) = mu(A & B).
inline std::vector<SubPopulation> level2_offspring(const SubPopulation& mu, const Level2Mechanism& mech, Engine& rng) {
  const std::uint64_t t = total(mu);
  if (t == 0) throw ValidationError("level-2 parent must have a non-empty sub-population");
  if (mech.kind == Level2Mechanism::Kind::Restriction) {
    if (mech.subset.size() != mu.size()) throw ValidationError("restriction subset has wrong length");
    SubPopulation out(mu.size(), 0);
    for (std::size_t s = 0; s < mu.size(); ++s) out[s] = mech.subset[s] ? mu[s] : 0;
    if (total(out) == 0) return {};
    return {out};
  }
  const std::uint64_t n = 1 + mech.extra_samples.sample(rng);
  std::vector<double> cum(mu.size());
  double acc = 0.0;
  for (std::size_t s = 0; s < mu.size(); ++s) cum[s] = (acc += static_cast<double>(mu[s]));
  SubPopulation out(mu.size(), 0);
  std::uint64_t remaining = t;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::size_t z = pick_cumulative(rng, cum);
    while (mu[z] == 0) z = pick_cumulative(rng, cum);  // rounding can only land on an empty bin at the edges
    std::uint64_t share = remaining;
    if (i + 1 < n && remaining > 0) {
      std::binomial_distribution<std::uint64_t> bin(remaining, 1.0 / static_cast<double>(n - i));
      share = bin(rng);
    }
    out[z] += share;
    remaining -= share;
  }
  return {out};
}

struct Level2Particle {
  std::uint32_t island = 0;
  SubPopulation counts;
  bool operator==(const Level2Particle&) const = default;
};

struct MultilevelState {
  std::vector<Level2Particle> particles;
  double weight = 1.0;  // mass of one level-1 individual
  double time = 0.0;
};

struct Level2Event {
  double time = 0.0;
  std::uint32_t island = 0;
  SubPopulation parent;
  std::vector<SubPopulation> offspring;
  std::uint32_t suppressed = 0;
};

struct MultilevelDiagnostics {
  std::uint64_t events = 0;
  std::uint64_t level1_events = 0;
  std::uint64_t migrations = 0;
  std::uint64_t level2_branches = 0;
  std::uint64_t suppressed = 0;
  std::uint64_t extinctions = 0;
};

struct MultilevelOutcome {
  std::vector<MultilevelState> snapshots;
  MultilevelDiagnostics diagnostics;
  std::vector<Level2Event> level2_log;
};

// Exact event simulation of the two-level system. Level-1 individuals branch
// and move within their sub-population; a sub-population that dies out is
// removed. Level-2 particles migrate between islands and branch via the mechanism.
inline MultilevelOutcome simulate_multilevel(const MultilevelSpec& spec, const MultilevelState& init,
                                             const SimConfig& config, Engine& rng, bool log_level2 = false) {
  spec.validate();
  config.validate();
  const std::size_t ns = spec.s_space.size();
  for (const auto& p : init.particles) {
    if (p.island >= spec.islands.size() || p.counts.size() != ns) throw ValidationError("initial level-2 particle malformed");
    if (total(p.counts) == 0) throw ValidationError("initial sub-populations must be non-empty");
  }
  std::vector<double> s_jump(ns);
  for (std::size_t s = 0; s < ns; ++s) s_jump[s] = -spec.s_q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));

  MultilevelOutcome out;
  std::vector<Level2Particle> ps = init.particles;
  auto particle_rate = [&](const Level2Particle& p) {
    double r = -spec.island_q(p.island, p.island) + spec.level2_beta;
    for (std::size_t s = 0; s < ns; ++s) r += static_cast<double>(p.counts[s]) * (spec.level1_rate + s_jump[s]);
    return r;
  };
  auto snapshot = [&](double t) { out.snapshots.push_back(MultilevelState{ps, init.weight, t}); };
  auto row_cumulative = [](const Eigen::MatrixXd& q, std::size_t from) {
    std::vector<double> c(static_cast<std::size_t>(q.cols()));
    double acc = 0.0;
    for (Eigen::Index y = 0; y < q.cols(); ++y) {
      if (static_cast<std::size_t>(y) != from) acc += q(static_cast<Eigen::Index>(from), y);
      c[static_cast<std::size_t>(y)] = acc;
    }
    return c;
  };

  double t = 0.0;
  std::size_t snap = 0;
  std::vector<double> rates;
  while (true) {
    rates.resize(ps.size());
    double total_rate = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) total_rate += (rates[i] = particle_rate(ps[i]));
    const double t_next = total_rate > 0.0 ? t + exponential(rng, total_rate) : std::numeric_limits<double>::infinity();
    while (snap < config.snapshot_times.size() && config.snapshot_times[snap] < t_next) {
      t = config.snapshot_times[snap++];
      snapshot(t);
    }
    if (t_next > config.horizon) break;
    t = t_next;
    if (++out.diagnostics.events > config.max_events) throw GuardError("max_events exceeded in multilevel run");

    double u = uniform01(rng) * total_rate;
    std::size_t i = 0;
    while (i + 1 < ps.size() && (u >= rates[i] || rates[i] == 0.0)) {
      u -= rates[i];
      ++i;
    }
    Level2Particle& p = ps[i];
    const double jump = -spec.island_q(p.island, p.island);
    if (u < jump) {
      p.island = static_cast<std::uint32_t>(pick_cumulative(rng, row_cumulative(spec.island_q, p.island)));
      ++out.diagnostics.migrations;
      continue;
    }
    u -= jump;
    if (u < spec.level2_beta) {
      ++out.diagnostics.level2_branches;
      Level2Event ev{t, p.island, p.counts, {}, 0};
      const std::uint32_t n_off = spec.level2_offspring.sample(rng);
      for (std::uint32_t k = 0; k < n_off; ++k) {
        auto off = level2_offspring(p.counts, spec.mechanism, rng);
        if (off.empty()) {
          ++ev.suppressed;
          ++out.diagnostics.suppressed;
        } else {
          ev.offspring.push_back(std::move(off.front()));
        }
      }
      const std::uint32_t island = p.island;
      ps[i] = std::move(ps.back());
      ps.pop_back();
      for (const auto& o : ev.offspring) ps.push_back(Level2Particle{island, o});
      if (log_level2) out.level2_log.push_back(std::move(ev));
    } else {
      u -= spec.level2_beta;
      std::size_t s = 0;
      for (; s + 1 < ns; ++s) {
        const double w = static_cast<double>(p.counts[s]) * (spec.level1_rate + s_jump[s]);
        if (w > 0.0 && u < w) break;
        u -= w;
      }
      while (p.counts[s] == 0) --s;  // top-end rounding
      ++out.diagnostics.level1_events;
      const double pick = uniform01(rng) * (spec.level1_rate + s_jump[s]);
      --p.counts[s];
      if (pick < s_jump[s]) {
        ++p.counts[pick_cumulative(rng, row_cumulative(spec.s_q, s))];
      } else {
        p.counts[s] += spec.level1_law.sample(rng);
      }
      if (total(p.counts) == 0) {
        ++out.diagnostics.extinctions;
        ps[i] = std::move(ps.back());
        ps.pop_back();
      }
    }
    std::uint64_t individuals = 0;
    for (const auto& q : ps) individuals += total(q.counts);
    if (individuals > config.max_population) throw GuardError("max_population exceeded in multilevel run");
  }
  return out;
}

// Y(e, s) = weight * sum over level-2 particles on island e of their count at s,
// flattened as e * |S| + s.
inline std::vector<double> aggregate_level(const MultilevelState& state, std::size_t n_islands, std::size_t n_s) {
  std::vector<double> y(n_islands * n_s, 0.0);
  for (const auto& p : state.particles) {
    for (std::size_t s = 0; s < n_s; ++s) y[p.island * n_s + s] += state.weight * static_cast<double>(p.counts[s]);
  }
  return y;
}

}  // namespace superbranch::zoo
