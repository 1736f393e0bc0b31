#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "superbranch/engine.hpp"
#include "superbranch/errors.hpp"
#include "superbranch/stats.hpp"

namespace superbranch {

// Worker count for replicate loops. `requested` = 0 means one per hardware
// thread; SUPERBRANCH_THREADS, when set to a positive integer, caps the result.
inline unsigned resolve_threads(unsigned requested = 0) {
  unsigned n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SUPERBRANCH_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) n = std::min<unsigned long>(n, cap);
  }
  return n;
}

// Runs body(r) for r in [0, n) on up to `threads` workers. Each index is
// handled exactly once; the first exception is rethrown after all workers stop.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t r = 0; r < n; ++r) body(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= n) return;
      try {
        body(r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Maps one snapshot to a fixed number of scalar functionals.
using SnapshotReducer = std::function<void(const Population&, std::span<double> out)>;

// Per-replicate functionals on the snapshot grid; truncated replicates keep
// NaN for snapshots they never reached and are excluded from statistics.
struct ReplicateSet {
  long k = 1;
  std::uint64_t master_seed = 0;
  std::size_t replicates = 0;
  std::vector<double> times;
  std::size_t width = 0;       // functionals per snapshot
  std::vector<double> values;  // [(r * times + ti) * width + fi]
  std::vector<SimDiagnostics> diagnostics;
  std::vector<std::size_t> truncated;

  double value(std::size_t r, std::size_t ti, std::size_t fi) const {
    return values[(r * times.size() + ti) * width + fi];
  }

  std::size_t time_index(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] == t) return i;
    }
    throw LookupError("time " + std::to_string(t) + " is not a snapshot time");
  }

  bool is_truncated(std::size_t r) const {
    return std::binary_search(truncated.begin(), truncated.end(), r);
  }

  // Functional fi at snapshot ti over the complete replicates.
  std::vector<double> column(std::size_t ti, std::size_t fi) const {
    std::vector<double> out;
    out.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
      if (!is_truncated(r)) out.push_back(value(r, ti, fi));
    }
    return out;
  }

  // Empirical Laplace transform E exp(-X_t(f_fi)) with its standard error.
  std::pair<double, double> laplace(std::size_t ti, std::size_t fi) const {
    auto col = column(ti, fi);
    for (double& v : col) v = std::exp(-v);
    const Summary s = summarize(col);
    return {s.mean, s.std_error};
  }

  ExperimentResult result(std::size_t ti, std::size_t fi, double reference, std::string tag) const {
    return ExperimentResult::from(column(ti, fi), reference, std::move(tag));
  }
};

struct ReplicateOptions {
  unsigned threads = 0;          // 0: hardware concurrency, still capped by SUPERBRANCH_THREADS
  double initial_mass = 1.0;
  bool keep_going = false;       // record truncations instead of rethrowing
};

// Replicate r draws its initial condition and its trajectory from
// RngStream{master_seed, r}; results do not depend on the thread count.
inline ReplicateSet run_replicates(const ParticleLaws& laws, const LimitSystemSpec& spec, std::span<const double> mu,
                                   const SimConfig& config, std::size_t n_replicates, std::uint64_t master_seed,
                                   const SnapshotReducer& reducer, std::size_t width,
                                   const ReplicateOptions& options = {}) {
  if (n_replicates < 1) throw ValidationError("need at least one replicate");
  if (mu.size() != spec.size()) throw ValidationError("initial measure length does not match site count");
  spec.validate();
  config.validate();
  ReplicateSet set;
  set.k = laws.k;
  set.master_seed = master_seed;
  set.replicates = n_replicates;
  set.times = config.snapshot_times;
  set.width = width;
  set.values.assign(n_replicates * set.times.size() * width, std::numeric_limits<double>::quiet_NaN());
  set.diagnostics.resize(n_replicates);
  std::vector<char> truncated(n_replicates, 0);

  auto fill = [&](std::size_t r, const SimOutcome& out) {
    for (std::size_t ti = 0; ti < out.snapshots.size(); ++ti) {
      std::span<double> slot(set.values.data() + (r * set.times.size() + ti) * width, width);
      reducer(out.snapshots[ti], slot);
    }
    set.diagnostics[r] = out.diagnostics;
  };

  parallel_for(n_replicates, resolve_threads(options.threads), [&](std::size_t r) {
    Engine rng = RngStream{master_seed, r}.engine();
    const Population init = sample_poisson_initial(mu, laws.k, rng, config.max_population, options.initial_mass);
    try {
      fill(r, simulate(laws, spec, init, config, rng));
    } catch (const TruncationError& e) {
      if (!options.keep_going) throw;
      fill(r, e.partial());
      truncated[r] = 1;
    }
  });
  for (std::size_t r = 0; r < n_replicates; ++r) {
    if (truncated[r]) set.truncated.push_back(r);
  }
  return set;
}

// Convenience form: functional fi is X_t(fs[fi]).
inline ReplicateSet run_replicates(const ParticleLaws& laws, const LimitSystemSpec& spec, std::span<const double> mu,
                                   const SimConfig& config, std::size_t n_replicates, std::uint64_t master_seed,
                                   std::span<const TestFunction> fs, const ReplicateOptions& options = {}) {
  for (const auto& f : fs) {
    if (f.size() != spec.size()) throw ValidationError("test function length does not match site count");
  }
  std::vector<TestFunction> functions(fs.begin(), fs.end());
  SnapshotReducer reducer = [functions](const Population& pop, std::span<double> out) {
    for (std::size_t i = 0; i < functions.size(); ++i) out[i] = pop.integrate(functions[i].values());
  };
  return run_replicates(laws, spec, mu, config, n_replicates, master_seed, reducer, functions.size(), options);
}

// Sample mean of exp(-X_t(f)) over replicate trajectories, with standard error.
inline std::pair<double, double> empirical_laplace(const std::vector<std::vector<Population>>& runs,
                                                   const TestFunction& f, double t) {
  if (runs.size() < 2) throw DomainError("empirical Laplace needs at least 2 replicates");
  std::vector<double> samples;
  samples.reserve(runs.size());
  for (const auto& run : runs) {
    auto it = std::find_if(run.begin(), run.end(), [t](const Population& p) { return p.time == t; });
    if (it == run.end()) throw LookupError("time " + std::to_string(t) + " is not a snapshot time");
    samples.push_back(std::exp(-it->integrate(f.values())));
  }
  const Summary s = summarize(samples);
  return {s.mean, s.std_error};
}

}  // namespace superbranch
