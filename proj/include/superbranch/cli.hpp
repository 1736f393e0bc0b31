#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "superbranch/age.hpp"
#include "superbranch/config.hpp"
#include "superbranch/cumulant.hpp"
#include "superbranch/engine.hpp"
#include "superbranch/moment.hpp"
#include "superbranch/particle_laws.hpp"
#include "superbranch/replicates.hpp"
#include "superbranch/stats.hpp"
#include "superbranch/zoo/mass_structured.hpp"
#include "superbranch/zoo/multilevel.hpp"
#include "superbranch/zoo/registry.hpp"

namespace superbranch::cli {

enum ExitCode : int { kOk = 0, kOther = 1, kValidation = 2, kTruncation = 3, kVerdictFailure = 4 };

struct Options {
  std::string command;
  std::string config_path;
  config::Overrides overrides;
  std::string out_dir = ".";
  bool events = false;  // simulate: also write events.csv for replicate 0 of the first k
};

// 17 significant digits, round-trip exact.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

using Json = nlohmann::json;

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline Json summary_base(const config::RunConfig& run, const std::string& command) {
  Json j;
  j["command"] = command;
  j["scenario_id"] = run.scenario_id;
  j["model"] = run.model;
  j["config_hash"] = run.hash_hex();
  j["master_seed"] = run.experiment.master_seed;
  j["replicates"] = run.experiment.replicates;
  j["k"] = run.experiment.k;
  j["budgets"] = {{"sigma", run.experiment.budgets.sigma}, {"bias", run.experiment.budgets.bias}};
  j["solver"] = {{"method", to_string(run.solver.method)}, {"step", run.solver.step}, {"tol", run.solver.picard_tol}};
  return j;
}

inline void write_summary(const std::filesystem::path& dir, const Json& j) {
  std::ofstream out(dir / "summary.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write summary.json");
  out << j.dump(2) << '\n';
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void require_grid_model(const config::RunConfig& run, const std::string& command) {
  if (run.multilevel) throw config::ConfigError("/model/name", "multilevel supports only the simulate command, not " + command);
}

inline void require_single_site_age(const config::RunConfig& run) {
  if (run.spec.size() != 1) throw config::ConfigError("/space/sites", "age-reproduction solves need a single site");
}

inline AgeGridConfig age_grid(const config::RunConfig& run) {
  AgeGridConfig c;
  c.step = run.solver.step;
  c.age_step = run.age_step;
  return c;
}

// Replicate functionals for one k: X_t(f) per function, plus the aggregated
// mass Y_t(f) for the mass-structured model. Multilevel runs use the level
// aggregate on islands x S.
struct Functionals {
  std::vector<std::string> ids;
  ReplicateSet set;
};

inline Functionals simulate_k(const config::RunConfig& run, long k) {
  const auto& fs = run.experiment.functions;
  const SimConfig sim = run.sim_config();
  Functionals out;
  for (const auto& f : fs) out.ids.push_back(f.id);
  if (run.mass) {
    for (const auto& f : fs) out.ids.push_back(f.id + "@mass");
  }
  const std::size_t width = out.ids.size();

  if (run.multilevel) {
    const auto& ml = *run.multilevel;
    const std::size_t n_is = ml.islands.size(), n_s = ml.s_space.size();
    ReplicateSet& set = out.set;
    set.k = k;
    set.master_seed = run.experiment.master_seed;
    set.replicates = run.experiment.replicates;
    set.times = sim.snapshot_times;
    set.width = width;
    set.values.assign(set.replicates * set.times.size() * width, std::numeric_limits<double>::quiet_NaN());
    set.diagnostics.resize(set.replicates);
    std::vector<char> truncated(set.replicates, 0);
    zoo::MultilevelState init = *run.multilevel_init;
    init.weight = 1.0 / static_cast<double>(k);
    parallel_for(set.replicates, resolve_threads(0), [&](std::size_t r) {
      Engine rng = RngStream{set.master_seed, r}.engine();
      try {
        const auto res = zoo::simulate_multilevel(ml, init, sim, rng);
        for (std::size_t ti = 0; ti < res.snapshots.size(); ++ti) {
          const auto y = zoo::aggregate_level(res.snapshots[ti], n_is, n_s);
          for (std::size_t fi = 0; fi < width; ++fi) set.values[(r * set.times.size() + ti) * width + fi] = dot(y, fs[fi].values);
        }
      } catch (const GuardError&) {
        truncated[r] = 1;
      }
    });
    for (std::size_t r = 0; r < set.replicates; ++r) {
      if (truncated[r]) set.truncated.push_back(r);
    }
    return out;
  }

  const ParticleLaws laws = build_particle_laws(run.spec, k);
  const std::size_t n = run.spec.size();
  const bool mass = run.mass.has_value();
  SnapshotReducer reducer = [&fs, n, mass](const Population& pop, std::span<double> slot) {
    for (std::size_t i = 0; i < fs.size(); ++i) slot[i] = pop.integrate(fs[i].values);
    if (mass) {
      const auto y = zoo::aggregate_mass(pop, n);
      for (std::size_t i = 0; i < fs.size(); ++i) slot[fs.size() + i] = dot(y, fs[i].values);
    }
  };
  ReplicateOptions opts;
  opts.initial_mass = run.initial_mass;
  opts.keep_going = true;
  out.set = run_replicates(laws, run.spec, run.initial, sim, run.experiment.replicates, run.experiment.master_seed,
                           reducer, width, opts);
  return out;
}

// Values of functional fi at time index ti over replicates that finished.
inline std::vector<double> complete_column(const ReplicateSet& set, std::size_t ti, std::size_t fi) {
  std::vector<double> col;
  for (std::size_t r = 0; r < set.replicates; ++r) {
    if (!set.is_truncated(r)) col.push_back(set.value(r, ti, fi));
  }
  return col;
}

inline Summary safe_summary(const std::vector<double>& v) {
  if (v.size() >= 2) return summarize(v);
  Summary s;
  s.mean = s.variance = s.std_error = std::numeric_limits<double>::quiet_NaN();
  s.n = v.size();
  return s;
}

inline void write_events(const config::RunConfig& run, const std::filesystem::path& dir) {
  const long k = run.experiment.k.front();
  const SimConfig sim = run.sim_config();
  Engine rng = RngStream{run.experiment.master_seed, 0}.engine();
  if (run.multilevel) {
    zoo::MultilevelState init = *run.multilevel_init;
    init.weight = 1.0 / static_cast<double>(k);
    const auto res = zoo::simulate_multilevel(*run.multilevel, init, sim, rng, true);
    CsvWriter csv(dir / "events.csv", {"k", "replicate", "time", "island", "parent_total", "offspring", "offspring_total",
                                       "suppressed", "config_hash", "master_seed"});
    for (const auto& e : res.level2_log) {
      std::uint64_t tot = 0;
      for (const auto& o : e.offspring) tot += zoo::total(o);
      csv.row({std::to_string(k), "0", fmt(e.time), run.multilevel->islands.labels()[e.island],
               std::to_string(zoo::total(e.parent)), std::to_string(e.offspring.size()), std::to_string(tot),
               std::to_string(e.suppressed), run.hash_hex(), std::to_string(run.experiment.master_seed)});
    }
    return;
  }
  const ParticleLaws laws = build_particle_laws(run.spec, k);
  const Population init = sample_poisson_initial(run.initial, k, rng, sim.max_population, run.initial_mass);
  EventLog log;
  try {
    simulate(laws, run.spec, init, sim, rng, &log);
  } catch (const TruncationError&) {
    // the log up to the guard is still written
  }
  const auto& labels = run.spec.space.labels();
  CsvWriter csv(dir / "events.csv",
                {"k", "replicate", "time", "kind", "particle", "site", "target", "offspring", "config_hash", "master_seed"});
  for (const auto& e : log) {
    csv.row({std::to_string(k), "0", fmt(e.time), to_string(e.kind), std::to_string(e.particle), labels[e.site],
             labels[e.target], std::to_string(e.offspring), run.hash_hex(), std::to_string(run.experiment.master_seed)});
  }
}

inline int cmd_simulate(const config::RunConfig& run, const Options& opt, std::ostream& out) {
  const std::filesystem::path dir(opt.out_dir);
  CsvWriter csv(dir / "simulate.csv", {"scenario_id", "model", "k", "replicates", "t", "f_id", "mean", "variance",
                                       "stderr", "laplace", "laplace_stderr", "completed", "config_hash", "master_seed"});
  Json summary = summary_base(run, "simulate");
  Json truncated = Json::object();
  bool any_truncated = false;
  for (long k : run.experiment.k) {
    const Functionals fx = simulate_k(run, k);
    const auto& set = fx.set;
    const std::size_t completed = set.replicates - set.truncated.size();
    truncated[std::to_string(k)] = set.truncated;
    any_truncated = any_truncated || !set.truncated.empty();
    for (std::size_t ti = 0; ti < set.times.size(); ++ti) {
      for (std::size_t fi = 0; fi < fx.ids.size(); ++fi) {
        const auto col = complete_column(set, ti, fi);
        std::vector<double> lap(col.size());
        for (std::size_t i = 0; i < col.size(); ++i) lap[i] = std::exp(-col[i]);
        const Summary s = safe_summary(col), l = safe_summary(lap);
        csv.row({run.scenario_id, run.model, std::to_string(k), std::to_string(set.replicates), fmt(set.times[ti]),
                 fx.ids[fi], fmt(s.mean), fmt(s.variance), fmt(s.std_error), fmt(l.mean), fmt(l.std_error),
                 std::to_string(completed), run.hash_hex(), std::to_string(run.experiment.master_seed)});
      }
    }
  }
  if (opt.events) write_events(run, dir);
  summary["truncated_replicates"] = truncated;
  summary["partial"] = any_truncated;
  write_summary(dir, summary);
  out << "simulate: wrote " << (dir / "simulate.csv").string() << (any_truncated ? " (partial: guard truncation)" : "")
      << '\n';
  return any_truncated ? kTruncation : kOk;
}

// Limit value exp(-mu(V_t f)) at every snapshot time, one row per function.
inline std::vector<std::vector<double>> theoretical(const config::RunConfig& run) {
  std::vector<std::vector<double>> ref;
  for (const auto& f : run.experiment.functions) {
    std::vector<double> row;
    if (run.age) {
      require_single_site_age(run);
      const double fv = f.values[0];
      const auto g = solve_age_renewal(run.age->beta, run.age->zeta, run.age->lifetime, [fv](double) { return fv; },
                                       run.experiment.horizon, age_grid(run));
      for (double t : run.experiment.snapshot_times) row.push_back(std::exp(-run.initial[0] * g.at(t, 0.0)));
    } else {
      const auto field = solve_cumulant(run.spec, TestFunction(f.values), run.experiment.horizon, run.solver);
      for (double t : run.experiment.snapshot_times) row.push_back(laplace_functional(run.initial, field, t));
    }
    ref.push_back(std::move(row));
  }
  return ref;
}

inline int cmd_compare(const config::RunConfig& run, const Options& opt, std::ostream& out) {
  require_grid_model(run, "compare");
  if (run.mass) throw config::ConfigError("/model/name", "compare on mass-structured runs uses positions only; use model none");
  const std::filesystem::path dir(opt.out_dir);
  const auto ref = theoretical(run);
  CsvWriter csv(dir / "compare.csv", {"scenario_id", "model", "k", "replicates", "t", "f_id", "empirical", "stderr",
                                      "theoretical", "z_score", "verdict", "config_hash", "master_seed"});
  Json summary = summary_base(run, "compare");
  Json verdicts = Json::array();
  Json truncated = Json::object();
  bool all_pass = true, any_truncated = false;
  const auto& fs = run.experiment.functions;
  std::vector<std::vector<std::vector<ConvergenceRow>>> conv(run.experiment.snapshot_times.size(),
                                                             std::vector<std::vector<ConvergenceRow>>(fs.size()));
  for (long k : run.experiment.k) {
    const Functionals fx = simulate_k(run, k);
    const auto& set = fx.set;
    truncated[std::to_string(k)] = set.truncated;
    any_truncated = any_truncated || !set.truncated.empty();
    for (std::size_t ti = 0; ti < set.times.size(); ++ti) {
      for (std::size_t fi = 0; fi < fs.size(); ++fi) {
        auto col = complete_column(set, ti, fi);
        for (double& v : col) v = std::exp(-v);
        const Summary s = safe_summary(col);
        const double theo = ref[fi][ti];
        const double z = s.std_error > 0.0 ? (s.mean - theo) / s.std_error : 0.0;
        const Verdict v = compare(s.mean, s.std_error, theo, run.experiment.budgets.sigma, run.experiment.budgets.bias);
        all_pass = all_pass && v.pass;
        csv.row({run.scenario_id, run.model, std::to_string(k), std::to_string(set.replicates), fmt(set.times[ti]),
                 fs[fi].id, fmt(s.mean), fmt(s.std_error), fmt(theo), fmt(z), v.pass ? "pass" : "fail", run.hash_hex(),
                 std::to_string(run.experiment.master_seed)});
        verdicts.push_back({{"k", k}, {"t", set.times[ti]}, {"f_id", fs[fi].id}, {"pass", v.pass}, {"margin", v.margin}});
        conv[ti][fi].push_back({k, s.mean - theo, s.std_error});
      }
    }
  }
  Json reports = Json::array();
  for (std::size_t ti = 0; ti < conv.size(); ++ti) {
    for (std::size_t fi = 0; fi < fs.size(); ++fi) {
      const auto rep = convergence_report(conv[ti][fi]);
      Json r{{"t", run.experiment.snapshot_times[ti]}, {"f_id", fs[fi].id}, {"resolved", rep.resolved}};
      r["slope"] = rep.slope ? Json(*rep.slope) : Json(nullptr);
      reports.push_back(std::move(r));
    }
  }
  summary["verdicts"] = verdicts;
  summary["all_pass"] = all_pass;
  summary["convergence"] = reports;
  summary["truncated_replicates"] = truncated;
  summary["partial"] = any_truncated;
  write_summary(dir, summary);
  out << "compare: " << (all_pass ? "all verdicts pass" : "some verdicts fail") << ", wrote "
      << (dir / "compare.csv").string() << (any_truncated ? " (partial: guard truncation)" : "") << '\n';
  if (any_truncated) return kTruncation;
  return all_pass ? kOk : kVerdictFailure;
}

inline void write_age_rows(CsvWriter& csv, const config::RunConfig& run, const std::string& f_id, const std::string& tag,
                           const AgeGrid& g) {
  for (std::size_t i = 0; i < g.times.size(); ++i) {
    for (std::size_t j = 0; j < g.ages.size(); ++j) {
      csv.row({run.scenario_id, run.model, tag, f_id, fmt(g.times[i]), fmt(g.ages[j]), fmt(g.values[i][j]), run.hash_hex(),
               std::to_string(run.experiment.master_seed)});
    }
  }
}

inline void write_grid_rows(CsvWriter& csv, const config::RunConfig& run, const std::string& f_id, const std::string& tag,
                            const GridField& g) {
  const auto& labels = run.spec.space.labels();
  for (std::size_t i = 0; i < g.times.size(); ++i) {
    for (std::size_t x = 0; x < labels.size(); ++x) {
      csv.row({run.scenario_id, run.model, tag, f_id, fmt(g.times[i]), labels[x], fmt(g.values[i][x]), run.hash_hex(),
               std::to_string(run.experiment.master_seed)});
    }
  }
}

inline int cmd_solve(const config::RunConfig& run, const Options& opt, std::ostream& out) {
  require_grid_model(run, "solve");
  const std::filesystem::path dir(opt.out_dir);
  const std::string method = to_string(run.solver.method);
  Json summary = summary_base(run, "solve");
  Json fields = Json::array();
  if (run.age) {
    require_single_site_age(run);
    CsvWriter csv(dir / "solve.csv", {"scenario_id", "model", "method", "f_id", "t", "age", "value", "config_hash", "master_seed"});
    for (const auto& f : run.experiment.functions) {
      const double fv = f.values[0];
      const auto g = solve_age_renewal(run.age->beta, run.age->zeta, run.age->lifetime, [fv](double) { return fv; },
                                       run.experiment.horizon, age_grid(run));
      write_age_rows(csv, run, f.id, "age-renewal", g);
      fields.push_back({{"f_id", f.id}, {"steps", g.times.size() - 1}});
    }
  } else {
    CsvWriter csv(dir / "solve.csv", {"scenario_id", "model", "method", "f_id", "t", "site", "value", "config_hash", "master_seed"});
    for (const auto& f : run.experiment.functions) {
      const auto field = solve_cumulant(run.spec, TestFunction(f.values), run.experiment.horizon, run.solver);
      write_grid_rows(csv, run, f.id, method, field);
      Json laplace = Json::array();
      for (double t : run.experiment.snapshot_times) laplace.push_back({{"t", t}, {"value", laplace_functional(run.initial, field, t)}});
      fields.push_back({{"f_id", f.id}, {"steps", field.times.size() - 1}, {"clamped", field.clamped},
                        {"iterations", field.iterations}, {"laplace", laplace}});
    }
  }
  summary["fields"] = fields;
  write_summary(dir, summary);
  out << "solve: wrote " << (dir / "solve.csv").string() << '\n';
  return kOk;
}

inline int cmd_moments(const config::RunConfig& run, const Options& opt, std::ostream& out) {
  require_grid_model(run, "moments");
  const std::filesystem::path dir(opt.out_dir);
  Json summary = summary_base(run, "moments");
  Json fields = Json::array();
  if (run.age) {
    require_single_site_age(run);
    CsvWriter csv(dir / "moments.csv", {"scenario_id", "model", "kind", "f_id", "t", "age", "value", "config_hash", "master_seed"});
    for (const auto& f : run.experiment.functions) {
      const double fv = f.values[0];
      const auto g = solve_age_moment(run.age->beta, run.age->offspring_mean, run.age->lifetime, [fv](double) { return fv; },
                                      run.experiment.horizon, age_grid(run));
      write_age_rows(csv, run, f.id, "T", g);
      fields.push_back({{"f_id", f.id}});
    }
  } else {
    CsvWriter csv(dir / "moments.csv", {"scenario_id", "model", "kind", "f_id", "t", "site", "value", "config_hash", "master_seed"});
    for (const auto& f : run.experiment.functions) {
      const TestFunction tf(f.values);
      const auto t_field = solve_T(run.spec, tf, run.experiment.horizon, run.solver);
      const auto u_field = solve_U(run.spec, tf, run.experiment.horizon, run.solver);
      write_grid_rows(csv, run, f.id, "T", t_field);
      write_grid_rows(csv, run, f.id, "U", u_field);
      Json means = Json::array();
      for (double t : run.experiment.snapshot_times) means.push_back({{"t", t}, {"value", integrate(run.initial, t_field.at(t))}});
      fields.push_back({{"f_id", f.id}, {"excessive_gap", excessive_gap(run.spec, tf, t_field.times, run.solver)},
                        {"mean", means}});
    }
  }
  summary["fields"] = fields;
  write_summary(dir, summary);
  out << "moments: wrote " << (dir / "moments.csv").string() << '\n';
  return kOk;
}

inline int cmd_zoo(std::ostream& out) {
  for (const auto& m : zoo::model_registry()) {
    out << m.name << ": " << m.summary << '\n';
    for (const auto& p : m.params) out << "  " << p.name << " (" << p.type << "): " << p.description << '\n';
  }
  return kOk;
}

}  // namespace detail

// Runs one subcommand; returns the process exit status.
inline int run(const Options& opt, std::ostream& out, std::ostream& err) {
  try {
    if (opt.command == "zoo") return detail::cmd_zoo(out);
    if (opt.config_path.empty()) throw ValidationError("--config is required for " + opt.command);
    const config::RunConfig cfg = config::load_file(opt.config_path, opt.overrides);
    std::filesystem::create_directories(opt.out_dir);
    if (opt.command == "simulate") return detail::cmd_simulate(cfg, opt, out);
    if (opt.command == "compare") return detail::cmd_compare(cfg, opt, out);
    if (opt.command == "solve") return detail::cmd_solve(cfg, opt, out);
    if (opt.command == "moments") return detail::cmd_moments(cfg, opt, out);
    throw ValidationError("unknown command '" + opt.command + "'");
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const LookupError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const GuardError& e) {
    err << "error: " << e.what() << '\n';
    return kTruncation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOther;
  }
}

}  // namespace superbranch::cli
