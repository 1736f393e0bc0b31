#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "superbranch/errors.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/particle_laws.hpp"
#include "superbranch/population.hpp"
#include "superbranch/rng.hpp"

namespace superbranch {

struct SimConfig {
  double horizon = 1.0;
  std::vector<double> snapshot_times{1.0};
  std::uint64_t max_events = 1'000'000'000ULL;
  std::uint64_t max_population = 50'000'000ULL;

  void validate() const {
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be finite and >= 0");
    if (max_events == 0 || max_population == 0) throw ValidationError("guards must be positive");
    for (std::size_t i = 0; i < snapshot_times.size(); ++i) {
      const double t = snapshot_times[i];
      if (!(t >= 0.0) || t > horizon) throw ValidationError("snapshot times must lie in [0, horizon]");
      if (i > 0 && !(t > snapshot_times[i - 1])) throw ValidationError("snapshot times must be strictly increasing");
    }
  }
};

enum class EventKind : std::uint8_t { Motion, LocalBranch, NonlocalBranch, Rejected, AgeDeath };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Motion: return "motion";
    case EventKind::LocalBranch: return "local";
    case EventKind::NonlocalBranch: return "nonlocal";
    case EventKind::Rejected: return "rejected";
    case EventKind::AgeDeath: return "age-death";
  }
  return "?";
}

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::Motion;
  std::uint64_t particle = 0;
  std::uint32_t site = 0;
  std::uint32_t target = 0;     // new site for motion events
  std::uint32_t offspring = 0;  // newly created particles
  bool operator==(const EventRecord&) const = default;
};

using EventLog = std::vector<EventRecord>;

struct SimDiagnostics {
  std::uint64_t events = 0;
  std::uint64_t motion = 0;
  std::uint64_t local_branch = 0;
  std::uint64_t nonlocal_branch = 0;
  std::uint64_t rejected = 0;
  std::uint64_t age_deaths = 0;
  std::vector<double> occupation;                 // integral over [0, horizon] of per-site counts
  std::vector<std::uint64_t> nonlocal_births;     // displaced offspring per target site
};

struct SimOutcome {
  std::vector<Population> snapshots;
  SimDiagnostics diagnostics;
};

class GuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A guard was exceeded mid-run; carries the snapshots taken so far.
class TruncationError : public GuardError {
 public:
  TruncationError(const std::string& what, SimOutcome partial)
      : GuardError(what), partial_(std::move(partial)) {}
  const SimOutcome& partial() const noexcept { return partial_; }

 private:
  SimOutcome partial_;
};

// Poisson(k mu(x)) particles at each site, weight 1/k, time 0.
inline Population sample_poisson_initial(std::span<const double> mu, long k, Engine& rng,
                                         std::uint64_t max_population = 50'000'000ULL,
                                         double initial_mass = 1.0) {
  if (k < 1) throw DomainError("k must be >= 1");
  double intensity = 0.0;
  for (double m : mu) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw DomainError("initial measure must be finite and >= 0");
    intensity += static_cast<double>(k) * m;
  }
  if (intensity > static_cast<double>(max_population)) {
    throw GuardError("initial intensity " + std::to_string(intensity) + " exceeds max_population");
  }
  Population pop;
  pop.weight = 1.0 / static_cast<double>(k);
  std::uint64_t id = 0;
  for (std::size_t x = 0; x < mu.size(); ++x) {
    if (mu[x] == 0.0) continue;
    std::poisson_distribution<std::uint64_t> dist(static_cast<double>(k) * mu[x]);
    const std::uint64_t n = dist(rng);
    for (std::uint64_t i = 0; i < n; ++i) {
      Particle p;
      p.id = id++;
      p.site = static_cast<std::uint32_t>(x);
      p.root_mass = p.birth_mass = p.mass = initial_mass;
      pop.particles.push_back(p);
    }
  }
  return pop;
}

inline Population sample_poisson_initial(std::span<const double> mu, long k, const RngStream& stream,
                                         std::uint64_t max_population = 50'000'000ULL,
                                         double initial_mass = 1.0) {
  Engine rng = stream.engine();
  return sample_poisson_initial(mu, k, rng, max_population, initial_mass);
}

namespace detail {

constexpr std::uint32_t kNoSlot = std::numeric_limits<std::uint32_t>::max();

class Simulator {
 public:
  Simulator(const ParticleLaws& laws, const LimitSystemSpec& spec, const SimConfig& config, Engine& rng,
            EventLog* log)
      : laws_(laws), spec_(spec), config_(config), rng_(rng), log_(log), n_sites_(spec.size()) {
    bound_ = spec_.rate_modifier ? spec_.rate_modifier->bound : 1.0;
    jump_.resize(n_sites_);
    per_particle_.resize(n_sites_);
    jump_cumulative_.resize(n_sites_);
    for (std::size_t s = 0; s < n_sites_; ++s) {
      jump_[s] = spec_.motion.jump_rate(s);
      per_particle_[s] = jump_[s] + laws_.gamma(s) * bound_;
      std::vector<double> row(n_sites_, 0.0);
      for (std::size_t y = 0; y < n_sites_; ++y) {
        if (y != s) row[y] = spec_.motion.q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(y));
      }
      jump_cumulative_[s] = cumulative(row);
      std::vector<double> lc;
      for (const auto& c : laws_.local[s]) lc.push_back(c.rate);
      local_cumulative_.push_back(lc.empty() ? std::vector<double>{} : cumulative(lc));
      std::vector<double> nc;
      for (const auto& br : laws_.nonlocal[s]) nc.push_back(br.weight);
      nonlocal_cumulative_.push_back(cumulative(nc));
    }
    members_.resize(n_sites_);
    lifetime_ = spec_.age ? spec_.age->lifetime : std::numeric_limits<double>::infinity();
  }

  SimOutcome run(const Population& init) {
    weight_ = init.weight;
    diag_.occupation.assign(n_sites_, 0.0);
    diag_.nonlocal_births.assign(n_sites_, 0);
    for (const auto& p : init.particles) {
      if (p.site >= n_sites_) throw DomainError("initial particle on unknown site");
      next_id_ = std::max(next_id_, p.id + 1);
    }
    for (const auto& p : init.particles) insert(p);

    double t = 0.0;
    std::size_t snap = 0;
    const auto& times = config_.snapshot_times;
    while (true) {
      const double total = total_rate();
      const double t_event = total > 0.0 ? t + exponential(rng_, total) : std::numeric_limits<double>::infinity();
      const double t_death = next_death();
      const double t_stop = std::min(t_event, t_death);
      while (snap < times.size() && times[snap] < t_stop) {
        advance(t, times[snap]);
        t = times[snap];
        outcome_.snapshots.push_back(snapshot(t));
        ++snap;
      }
      if (t_stop > config_.horizon) {
        advance(t, config_.horizon);
        break;
      }
      advance(t, t_stop);
      t = t_stop;
      if (++diag_.events > config_.max_events) {
        outcome_.diagnostics = diag_;
        throw TruncationError("max_events exceeded at t=" + std::to_string(t), std::move(outcome_));
      }
      if (t_death <= t_event) {
        age_death(t);
      } else {
        fire(t, total);
      }
      if (particles_.size() > config_.max_population) {
        outcome_.diagnostics = diag_;
        throw TruncationError("max_population exceeded at t=" + std::to_string(t), std::move(outcome_));
      }
    }
    outcome_.diagnostics = diag_;
    return std::move(outcome_);
  }

 private:
  static std::vector<double> cumulative(const std::vector<double>& w) { return superbranch::detail::cumulative(w); }

  double total_rate() const {
    double r = 0.0;
    for (std::size_t s = 0; s < n_sites_; ++s) r += static_cast<double>(members_[s].size()) * per_particle_[s];
    return r;
  }

  void advance(double from, double to) {
    const double dt = to - from;
    if (dt <= 0.0) return;
    for (std::size_t s = 0; s < n_sites_; ++s) diag_.occupation[s] += static_cast<double>(members_[s].size()) * dt;
  }

  double next_death() {
    while (!deaths_.empty()) {
      const auto [time, id] = deaths_.top();
      if (id < slot_of_id_.size() && slot_of_id_[id] != kNoSlot) return time;
      deaths_.pop();
    }
    return std::numeric_limits<double>::infinity();
  }

  double current_mass(const Particle& p, double t) const {
    const double root = spec_.motion.mass_flow ? (*spec_.motion.mass_flow)(t, p.root_mass) : p.root_mass;
    return p.lineage * root;
  }

  void insert(const Particle& p) {
    const auto slot = static_cast<std::uint32_t>(particles_.size());
    particles_.push_back(p);
    member_pos_.push_back(static_cast<std::uint32_t>(members_[p.site].size()));
    members_[p.site].push_back(slot);
    if (p.id >= slot_of_id_.size()) slot_of_id_.resize(p.id + 1, kNoSlot);
    slot_of_id_[p.id] = slot;
    if (std::isfinite(lifetime_)) deaths_.emplace(p.birth_time + lifetime_, p.id);
  }

  void unlink_member(std::uint32_t slot) {
    auto& bucket = members_[particles_[slot].site];
    const std::uint32_t pos = member_pos_[slot];
    const std::uint32_t moved = bucket.back();
    bucket[pos] = moved;
    member_pos_[moved] = pos;
    bucket.pop_back();
  }

  void link_member(std::uint32_t slot) {
    auto& bucket = members_[particles_[slot].site];
    member_pos_[slot] = static_cast<std::uint32_t>(bucket.size());
    bucket.push_back(slot);
  }

  void remove(std::uint32_t slot) {
    unlink_member(slot);
    slot_of_id_[particles_[slot].id] = kNoSlot;
    const auto last = static_cast<std::uint32_t>(particles_.size() - 1);
    if (slot != last) {
      particles_[slot] = particles_[last];
      member_pos_[slot] = member_pos_[last];
      members_[particles_[slot].site][member_pos_[slot]] = slot;
      slot_of_id_[particles_[slot].id] = slot;
    }
    particles_.pop_back();
    member_pos_.pop_back();
  }

  void spawn(const Particle& parent, std::uint32_t site, double t) {
    Particle child;
    child.id = next_id_++;
    child.site = site;
    child.birth_time = t;
    child.root_mass = parent.root_mass;
    child.lineage = parent.lineage * spec_.mass_offspring_factor;
    child.birth_mass = current_mass(child, t);
    child.mass = child.birth_mass;
    insert(child);
  }

  void record(double t, EventKind kind, const Particle& p, std::uint32_t target, std::uint32_t offspring) {
    if (log_) log_->push_back({t, kind, p.id, p.site, target, offspring});
  }

  void age_death(double t) {
    const auto id = deaths_.top().second;
    deaths_.pop();
    const std::uint32_t slot = slot_of_id_[id];
    ++diag_.age_deaths;
    record(t, EventKind::AgeDeath, particles_[slot], particles_[slot].site, 0);
    remove(slot);
  }

  void fire(double t, double total) {
    // site proportional to count * per-particle dominating rate
    double u = uniform01(rng_) * total;
    std::size_t s = n_sites_;
    for (std::size_t y = 0; y < n_sites_; ++y) {
      const double w = static_cast<double>(members_[y].size()) * per_particle_[y];
      if (w <= 0.0) continue;
      s = y;  // last eligible site absorbs rounding at the top end
      if (u < w) break;
      u -= w;
    }
    const std::uint32_t slot = members_[s][uniform_index(rng_, members_[s].size())];
    const double v = uniform01(rng_) * per_particle_[s];

    if (v < jump_[s]) {
      const auto target = static_cast<std::uint32_t>(pick_cumulative(rng_, jump_cumulative_[s]));
      ++diag_.motion;
      record(t, EventKind::Motion, particles_[slot], target, 0);
      unlink_member(slot);
      particles_[slot].site = target;
      link_member(slot);
      return;
    }

    if (spec_.rate_modifier) {
      const Particle& p = particles_[slot];
      const double factor = spec_.rate_modifier->factor(t - p.birth_time, current_mass(p, t));
      if (!(factor >= 0.0) || factor > bound_ * (1.0 + 1e-12)) {
        throw InvariantViolation("rate modifier " + std::to_string(factor) + " outside [0, bound=" +
                                 std::to_string(bound_) + "]");
      }
      if (uniform01(rng_) * bound_ >= factor) {
        ++diag_.rejected;
        record(t, EventKind::Rejected, p, p.site, 0);
        return;
      }
    }

    const double gamma = laws_.gamma(s);
    const bool local = uniform01(rng_) * gamma < laws_.alpha[s];
    const Particle parent = particles_[slot];
    if (local) {
      const auto& comp = laws_.local[s][pick_cumulative(rng_, local_cumulative_[s])];
      const std::uint32_t n = comp.law.sample(rng_);
      ++diag_.local_branch;
      record(t, EventKind::LocalBranch, parent, parent.site, n);
      branch_parent(slot);
      for (std::uint32_t i = 0; i < n; ++i) spawn(parent, parent.site, t);
      return;
    }

    const auto& br = laws_.nonlocal[s][pick_cumulative(rng_, nonlocal_cumulative_[s])];
    std::uint32_t n = 0;
    double u2 = uniform01(rng_);
    if (u2 < br.q_one) {
      n = 1;
    } else {
      u2 -= br.q_one;
      for (std::size_t j = 0; j < br.poisson_weight.size(); ++j) {
        if (u2 < br.poisson_weight[j]) {
          n = CountLaw::poisson(br.poisson_mean[j]).sample(rng_);
          break;
        }
        u2 -= br.poisson_weight[j];
      }
    }
    ++diag_.nonlocal_branch;
    record(t, EventKind::NonlocalBranch, parent, parent.site, n);
    branch_parent(slot);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto target = static_cast<std::uint32_t>(pick_cumulative(rng_, br.pi_cumulative));
      ++diag_.nonlocal_births[target];
      spawn(parent, target, t);
    }
  }

  // The parent dies, or under rebirth stays in place with one more branch on record.
  void branch_parent(std::uint32_t slot) {
    if (spec_.rebirth) {
      ++particles_[slot].repro_count;
    } else {
      remove(slot);
    }
  }

  Population snapshot(double t) const {
    Population pop;
    pop.weight = weight_;
    pop.time = t;
    pop.particles = particles_;
    for (auto& p : pop.particles) {
      p.age = t - p.birth_time;
      p.mass = current_mass(p, t);
    }
    return pop;
  }

  const ParticleLaws& laws_;
  const LimitSystemSpec& spec_;
  const SimConfig& config_;
  Engine& rng_;
  EventLog* log_;
  std::size_t n_sites_;
  double bound_ = 1.0;
  double lifetime_ = std::numeric_limits<double>::infinity();
  double weight_ = 1.0;
  std::uint64_t next_id_ = 0;

  std::vector<double> jump_;
  std::vector<double> per_particle_;
  std::vector<std::vector<double>> jump_cumulative_;
  std::vector<std::vector<double>> local_cumulative_;
  std::vector<std::vector<double>> nonlocal_cumulative_;

  std::vector<Particle> particles_;
  std::vector<std::uint32_t> member_pos_;
  std::vector<std::vector<std::uint32_t>> members_;
  std::vector<std::uint32_t> slot_of_id_;
  std::priority_queue<std::pair<double, std::uint64_t>, std::vector<std::pair<double, std::uint64_t>>,
                      std::greater<>>
      deaths_;

  SimDiagnostics diag_;
  SimOutcome outcome_;
};

}  // namespace detail

// Exact event-driven realization of the (rebirth) branching particle system,
// drawing from `rng`.
inline SimOutcome simulate(const ParticleLaws& laws, const LimitSystemSpec& spec, const Population& init,
                           const SimConfig& config, Engine& rng, EventLog* log = nullptr) {
  spec.validate();
  config.validate();
  if (laws.size() != spec.size()) throw ValidationError("particle laws and spec have different site counts");
  if (laws.rebirth != spec.rebirth) throw ValidationError("particle laws were built for a different rebirth flag");
  if (init.time != 0.0) throw ValidationError("initial population must be at time 0");
  detail::Simulator sim(laws, spec, config, rng, log);
  return sim.run(init);
}

inline SimOutcome simulate(const ParticleLaws& laws, const LimitSystemSpec& spec, const Population& init,
                           const SimConfig& config, const RngStream& stream, EventLog* log = nullptr) {
  Engine rng = stream.engine();
  return simulate(laws, spec, init, config, rng, log);
}

}  // namespace superbranch
