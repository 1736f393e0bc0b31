#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "superbranch/cumulant.hpp"
#include "superbranch/engine.hpp"
#include "superbranch/hashing.hpp"
#include "superbranch/mechanism.hpp"
#include "superbranch/zoo/age_reproduction.hpp"
#include "superbranch/zoo/controlled_immigration.hpp"
#include "superbranch/zoo/ktype.hpp"
#include "superbranch/zoo/mass_structured.hpp"
#include "superbranch/zoo/multilevel.hpp"
#include "superbranch/zoo/rebirth.hpp"

namespace superbranch::config {

using Json = nlohmann::json;

// Schema violation at a JSON-pointer style path, e.g. /experiment/k/0.
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : ValidationError((path.empty() ? std::string("/") : path) + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct FunctionEntry {
  std::string id;
  std::vector<double> values;
};

struct Budgets {
  double sigma = 3.0;
  double bias = 0.0;
};

struct ExperimentSection {
  std::vector<long> k{100};
  std::size_t replicates = 1000;
  double horizon = 1.0;
  std::vector<double> snapshot_times{1.0};
  std::uint64_t master_seed = 0;
  Budgets budgets;
  std::vector<FunctionEntry> functions;
  std::uint64_t max_events = SimConfig{}.max_events;
  std::uint64_t max_population = SimConfig{}.max_population;
};

// Validated run description. `spec` is the flattened system that the engine
// and solvers see; model-specific extras sit in the optionals.
struct RunConfig {
  std::string scenario_id = "unnamed";
  std::string model = "none";
  LimitSystemSpec spec;
  SiteMeasure initial;
  double initial_mass = 1.0;
  ExperimentSection experiment;
  SolverConfig solver;
  double age_step = 0.0;
  std::optional<zoo::AgeReproduction> age;
  std::optional<zoo::MassStructured> mass;
  std::optional<zoo::MultilevelSpec> multilevel;
  std::optional<zoo::MultilevelState> multilevel_init;
  std::string canonical;  // compact dump of the effective document
  std::uint64_t hash = 0;

  std::string hash_hex() const { return hex64(hash); }

  SimConfig sim_config() const {
    SimConfig c;
    c.horizon = experiment.horizon;
    c.snapshot_times = experiment.snapshot_times;
    c.max_events = experiment.max_events;
    c.max_population = experiment.max_population;
    return c;
  }
};

// Command-line overrides, applied to the document before validation and hashing.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::vector<long> k;
  std::optional<std::string> method;
};

namespace detail {

inline std::string join(const std::string& path, const std::string& key) { return path + "/" + key; }
inline std::string join(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

inline void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
}

inline void allow_keys(const Json& j, const std::string& path, std::initializer_list<const char*> keys) {
  expect_object(j, path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(join(path, it.key()), "unknown key");
  }
}

inline const Json& require(const Json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "missing required key");
  return j.at(key);
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "number must be finite");
  return v;
}

inline double number(const Json& j, const std::string& path, const char* key, double fallback) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : fallback;
}

inline std::uint64_t unsigned_int(const Json& j, const std::string& path) {
  if (!j.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}


inline const Json& array(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected a list");
  return j;
}

inline std::vector<double> numbers(const Json& j, const std::string& path, std::optional<std::size_t> length = {}) {
  array(j, path);
  if (length && j.size() != *length) {
    throw ConfigError(path, "expected " + std::to_string(*length) + " entries, got " + std::to_string(j.size()));
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], join(path, i)));
  return out;
}

inline std::vector<std::string> labels(const Json& j, const std::string& path) {
  array(j, path);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(text(j[i], join(path, i)));
  return out;
}

inline Eigen::MatrixXd matrix(const Json& j, const std::string& path, std::size_t n) {
  array(j, path);
  if (j.size() != n) throw ConfigError(path, "expected " + std::to_string(n) + " rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = numbers(j[i], join(path, i), n);
    for (std::size_t c = 0; c < n; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

// Re-throw library validation failures with the section path attached.
template <class F>
auto at_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  } catch (const DomainError& e) {
    throw ConfigError(path, e.what());
  }
}

inline SiteSpace parse_space(const Json& j, const std::string& path) {
  allow_keys(j, path, {"sites", "factorization"});
  auto names = labels(require(j, path, "sites"), join(path, "sites"));
  std::optional<Factorization> fac;
  if (j.contains("factorization")) {
    const std::string fp = join(path, "factorization");
    const Json& f = j.at("factorization");
    allow_keys(f, fp, {"base", "types"});
    fac = Factorization{labels(require(f, fp, "base"), join(fp, "base")), labels(require(f, fp, "types"), join(fp, "types"))};
  }
  return at_path(path, [&] { return SiteSpace(std::move(names), std::move(fac)); });
}

inline Eigen::MatrixXd parse_motion(const Json* j, const std::string& path, std::size_t n) {
  if (!j) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  allow_keys(*j, path, {"q"});
  Eigen::MatrixXd q = j->contains("q") ? matrix(j->at("q"), join(path, "q"), n)
                                       : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  at_path(join(path, "q"), [&] { MotionGenerator{q, std::nullopt, false}.validate(n); });
  return q;
}

inline LocalMechanism parse_local(const Json* j, const std::string& path, std::size_t n) {
  LocalMechanism l = LocalMechanism::zero(n);
  if (!j) return l;
  allow_keys(*j, path, {"b", "c", "atoms"});
  if (j->contains("b")) l.b = numbers(j->at("b"), join(path, "b"), n);
  if (j->contains("c")) l.c = numbers(j->at("c"), join(path, "c"), n);
  if (j->contains("atoms")) {
    const std::string ap = join(path, "atoms");
    const Json& a = array(j->at("atoms"), ap);
    if (a.size() != n) throw ConfigError(ap, "expected one atom list per site");
    for (std::size_t x = 0; x < n; ++x) {
      const std::string xp = join(ap, x);
      array(a[x], xp);
      for (std::size_t i = 0; i < a[x].size(); ++i) {
        const std::string ip = join(xp, i);
        allow_keys(a[x][i], ip, {"u", "m"});
        l.atoms[x].push_back({number(require(a[x][i], ip, "u"), join(ip, "u")), number(require(a[x][i], ip, "m"), join(ip, "m"))});
      }
    }
  }
  at_path(path, [&] { l.validate(n); });
  return l;
}

inline std::vector<CountAtom> parse_count_atoms(const Json& j, const std::string& path) {
  array(j, path);
  std::vector<CountAtom> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string ip = join(path, i);
    allow_keys(j[i], ip, {"u", "n"});
    out.push_back({number(require(j[i], ip, "u"), join(ip, "u")), number(require(j[i], ip, "n"), join(ip, "n"))});
  }
  return out;
}

inline NonlocalMechanism parse_nonlocal(const Json* j, const std::string& path, std::size_t n) {
  NonlocalMechanism nl = NonlocalMechanism::none(n);
  if (!j) return nl;
  allow_keys(*j, path, {"beta", "mixture"});
  if (j->contains("beta")) nl.beta = numbers(j->at("beta"), join(path, "beta"), n);
  if (j->contains("mixture")) {
    const std::string mp = join(path, "mixture");
    const Json& m = array(j->at("mixture"), mp);
    if (m.size() != n) throw ConfigError(mp, "expected one component list per site");
    for (std::size_t x = 0; x < n; ++x) {
      const std::string xp = join(mp, x);
      array(m[x], xp);
      nl.mixture[x].clear();
      for (std::size_t r = 0; r < m[x].size(); ++r) {
        const std::string rp = join(xp, r);
        const Json& c = m[x][r];
        allow_keys(c, rp, {"weight", "pi", "d", "atoms"});
        MixtureComponent comp;
        comp.weight = number(c, rp, "weight", 1.0);
        comp.pi = numbers(require(c, rp, "pi"), join(rp, "pi"), n);
        comp.d = number(c, rp, "d", 0.0);
        if (c.contains("atoms")) comp.atoms = parse_count_atoms(c.at("atoms"), join(rp, "atoms"));
        nl.mixture[x].push_back(std::move(comp));
      }
    }
  }
  at_path(path, [&] { nl.validate(n); });
  return nl;
}

inline const Json* optional_section(const Json& j, const char* key) { return j.contains(key) ? &j.at(key) : nullptr; }

inline CountLaw parse_count_law(const Json& j, const std::string& path) {
  allow_keys(j, path, {"kind", "count", "lambda"});
  const std::string kind = text(require(j, path, "kind"), join(path, "kind"));
  if (kind == "critical-binary") return CountLaw::critical_binary();
  if (kind == "fixed") return CountLaw::fixed(static_cast<std::uint32_t>(unsigned_int(require(j, path, "count"), join(path, "count"))));
  if (kind == "poisson") {
    const double lambda = number(require(j, path, "lambda"), join(path, "lambda"));
    if (lambda < 0.0) throw ConfigError(join(path, "lambda"), "must be >= 0");
    return CountLaw::poisson(lambda);
  }
  throw ConfigError(join(path, "kind"), "unknown count law '" + kind + "'");
}

inline ExperimentSection parse_experiment(const Json* j, const std::string& path, std::size_t n) {
  ExperimentSection e;
  if (j) {
    allow_keys(*j, path, {"k", "replicates", "horizon", "snapshot_times", "master_seed", "budgets", "functions",
                          "max_events", "max_population"});
    if (j->contains("k")) {
      const std::string kp = join(path, "k");
      e.k.clear();
      for (std::size_t i = 0; i < array(j->at("k"), kp).size(); ++i) {
        const auto v = unsigned_int(j->at("k")[i], join(kp, i));
        if (v < 1) throw ConfigError(join(kp, i), "k must be >= 1");
        e.k.push_back(static_cast<long>(v));
      }
      if (e.k.empty()) throw ConfigError(kp, "need at least one k");
    }
    if (j->contains("replicates")) {
      e.replicates = unsigned_int(j->at("replicates"), join(path, "replicates"));
      if (e.replicates < 2) throw ConfigError(join(path, "replicates"), "need at least 2 replicates");
    }
    e.horizon = number(*j, path, "horizon", 1.0);
    e.snapshot_times = j->contains("snapshot_times") ? numbers(j->at("snapshot_times"), join(path, "snapshot_times"))
                                                     : std::vector<double>{e.horizon};
    if (j->contains("master_seed")) e.master_seed = unsigned_int(j->at("master_seed"), join(path, "master_seed"));
    if (j->contains("budgets")) {
      const std::string bp = join(path, "budgets");
      allow_keys(j->at("budgets"), bp, {"sigma", "bias"});
      e.budgets.sigma = number(j->at("budgets"), bp, "sigma", e.budgets.sigma);
      e.budgets.bias = number(j->at("budgets"), bp, "bias", e.budgets.bias);
      if (e.budgets.sigma < 0.0 || e.budgets.bias < 0.0) throw ConfigError(bp, "budgets must be >= 0");
    }
    if (j->contains("max_events")) e.max_events = unsigned_int(j->at("max_events"), join(path, "max_events"));
    if (j->contains("max_population")) e.max_population = unsigned_int(j->at("max_population"), join(path, "max_population"));
    if (j->contains("functions")) {
      const std::string fp = join(path, "functions");
      const Json& fs = array(j->at("functions"), fp);
      for (std::size_t i = 0; i < fs.size(); ++i) {
        const std::string ip = join(fp, i);
        allow_keys(fs[i], ip, {"id", "values", "constant"});
        FunctionEntry f;
        f.id = text(require(fs[i], ip, "id"), join(ip, "id"));
        if (fs[i].contains("values") == fs[i].contains("constant")) throw ConfigError(ip, "give exactly one of values, constant");
        f.values = fs[i].contains("values") ? numbers(fs[i].at("values"), join(ip, "values"), n)
                                            : std::vector<double>(n, number(fs[i].at("constant"), join(ip, "constant")));
        for (std::size_t x = 0; x < n; ++x) {
          if (f.values[x] < 0.0) throw ConfigError(ip, "test function values must be >= 0");
        }
        for (const auto& other : e.functions) {
          if (other.id == f.id) throw ConfigError(join(ip, "id"), "duplicate function id '" + f.id + "'");
        }
        e.functions.push_back(std::move(f));
      }
    }
  }
  if (e.functions.empty()) e.functions.push_back({"one", std::vector<double>(n, 1.0)});
  at_path(path, [&] {
    SimConfig c;
    c.horizon = e.horizon;
    c.snapshot_times = e.snapshot_times;
    c.max_events = e.max_events;
    c.max_population = e.max_population;
    c.validate();
  });
  if (!(e.horizon > 0.0)) throw ConfigError(join(path, "horizon"), "must be > 0");
  return e;
}

inline SolverConfig parse_solver(const Json* j, const std::string& path, double& age_step) {
  SolverConfig s;
  if (!j) return s;
  allow_keys(*j, path, {"step", "tol", "max_iter", "method", "age_step"});
  s.step = number(*j, path, "step", s.step);
  s.picard_tol = number(*j, path, "tol", s.picard_tol);
  if (j->contains("max_iter")) s.picard_max_iter = static_cast<int>(unsigned_int(j->at("max_iter"), join(path, "max_iter")));
  if (j->contains("method")) {
    const std::string mp = join(path, "method");
    s.method = at_path(mp, [&] { return parse_method(text(j->at("method"), mp)); });
  }
  age_step = number(*j, path, "age_step", 0.0);
  at_path(path, [&] { s.validate(); });
  return s;
}

inline SiteMeasure parse_initial(const Json* j, const std::string& path, const SiteSpace& space) {
  SiteMeasure mu(space.size(), 0.0);
  if (!j) throw ConfigError(path, "missing required section");
  allow_keys(*j, path, {"entries"});
  const std::string ep = join(path, "entries");
  const Json& es = array(require(*j, path, "entries"), ep);
  for (std::size_t i = 0; i < es.size(); ++i) {
    const std::string ip = join(ep, i);
    allow_keys(es[i], ip, {"site", "mass"});
    const std::string label = text(require(es[i], ip, "site"), join(ip, "site"));
    const Site x = at_path(join(ip, "site"), [&] { return space.index_of(label); });
    const double m = number(require(es[i], ip, "mass"), join(ip, "mass"));
    if (m < 0.0) throw ConfigError(join(ip, "mass"), "must be >= 0");
    mu[x] += m;
  }
  return mu;
}

inline void reject(const Json& root, const char* key, const std::string& why) {
  if (root.contains(key)) throw ConfigError(std::string("/") + key, why);
}

// Builds the system spec and model extras of `run` from the model section.
inline void build_model(const Json& root, RunConfig& run) {
  const Json* model = optional_section(root, "model");
  Json params = Json::object();
  if (model) {
    allow_keys(*model, "/model", {"name", "params"});
    run.model = text(require(*model, "/model", "name"), "/model/name");
    if (model->contains("params")) {
      params = model->at("params");
      expect_object(params, "/model/params");
    }
  }
  const std::string pp = "/model/params";
  const SiteSpace space = parse_space(require(root, "", "space"), "/space");
  const std::size_t n = space.size();
  const Json* motion = optional_section(root, "motion");
  const Json* local = optional_section(root, "local");
  const Json* nonlocal = optional_section(root, "nonlocal");

  if (run.model == "none") {
    if (model && model->contains("params")) throw ConfigError(pp, "model 'none' takes no parameters");
    run.spec = LimitSystemSpec{space, MotionGenerator{parse_motion(motion, "/motion", n), std::nullopt, false},
                               parse_local(local, "/local", n), parse_nonlocal(nonlocal, "/nonlocal", n)};
    at_path("", [&] { run.spec.validate(); });
  } else if (run.model == "rebirth") {
    allow_keys(params, pp, {});
    reject(root, "local", "rebirth fixes the local mechanism; remove this section");
    const NonlocalMechanism nl = parse_nonlocal(nonlocal, "/nonlocal", n);
    run.spec = at_path("/nonlocal", [&] { return zoo::make_rebirth(space, parse_motion(motion, "/motion", n), nl.beta, nl.mixture); });
  } else if (run.model == "ktype") {
    allow_keys(params, pp, {"types", "transition"});
    reject(root, "local", "ktype takes per-type mechanisms under model.params.types");
    reject(root, "nonlocal", "ktype takes per-type mechanisms under model.params.types");
    reject(root, "motion", "ktype takes per-type motion under model.params.types");
    const std::string tp = pp + "/types";
    const Json& ts = array(require(params, pp, "types"), tp);
    std::vector<zoo::TypeComponents> types;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const std::string ip = join(tp, i);
      allow_keys(ts[i], ip, {"q", "local", "nonlocal"});
      types.push_back({ts[i].contains("q") ? matrix(ts[i].at("q"), join(ip, "q"), n)
                                           : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                       parse_local(optional_section(ts[i], "local"), join(ip, "local"), n),
                       parse_nonlocal(optional_section(ts[i], "nonlocal"), join(ip, "nonlocal"), n)});
    }
    const std::string trp = pp + "/transition";
    const Json& tr = array(require(params, pp, "transition"), trp);
    std::vector<std::vector<double>> transition;
    for (std::size_t i = 0; i < tr.size(); ++i) transition.push_back(numbers(tr[i], join(trp, i), ts.size()));
    run.spec = at_path(pp, [&] { return zoo::make_ktype(space, types, transition); });
  } else if (run.model == "controlled-immigration") {
    allow_keys(params, pp, {"q1", "q2", "phi1", "phi2"});
    for (const char* key : {"local", "nonlocal", "motion"}) reject(root, key, "controlled-immigration takes q1, q2, phi1, phi2 under model.params");
    const auto q1 = params.contains("q1") ? matrix(params.at("q1"), pp + "/q1", n) : parse_motion(nullptr, "", n);
    const auto q2 = params.contains("q2") ? matrix(params.at("q2"), pp + "/q2", n) : parse_motion(nullptr, "", n);
    const auto phi1 = parse_local(optional_section(params, "phi1"), pp + "/phi1", n);
    const auto phi2 = parse_local(optional_section(params, "phi2"), pp + "/phi2", n);
    run.spec = at_path(pp, [&] { return zoo::make_controlled_immigration(space, q1, q2, phi1, phi2).flattened; });
  } else if (run.model == "mass-structured") {
    allow_keys(params, pp, {"factor", "growth", "initial_mass"});
    const double factor = number(params, pp, "factor", 1.0);
    const double growth = number(params, pp, "growth", 0.0);
    run.initial_mass = number(params, pp, "initial_mass", 1.0);
    if (!(run.initial_mass > 0.0)) throw ConfigError(pp + "/initial_mass", "must be > 0");
    const auto q = parse_motion(motion, "/motion", n);
    const auto l = parse_local(local, "/local", n);
    const auto nl = parse_nonlocal(nonlocal, "/nonlocal", n);
    run.mass = at_path(pp, [&] { return zoo::make_mass_structured(space, q, factor, growth, l, nl); });
    run.spec = run.mass->spec;
  } else if (run.model == "age-reproduction") {
    allow_keys(params, pp, {"beta", "lifetime", "d", "atoms"});
    reject(root, "local", "age-reproduction fixes the local mechanism; remove this section");
    reject(root, "nonlocal", "age-reproduction takes beta, d, atoms under model.params");
    const double beta = number(require(params, pp, "beta"), pp + "/beta");
    double lifetime = std::numeric_limits<double>::infinity();
    if (params.contains("lifetime") && !params.at("lifetime").is_null()) lifetime = number(params.at("lifetime"), pp + "/lifetime");
    const double d = number(params, pp, "d", 0.0);
    const auto atoms = params.contains("atoms") ? parse_count_atoms(params.at("atoms"), pp + "/atoms") : std::vector<CountAtom>{};
    const auto q = parse_motion(motion, "/motion", n);
    run.age = at_path(pp, [&] {
      return zoo::make_age_reproduction(space, q, [beta](double) { return beta; }, beta, d, atoms, lifetime);
    });
    run.spec = run.age->spec;
  } else if (run.model == "multilevel") {
    allow_keys(params, pp, {"s_sites", "s_q", "level1_rate", "level1_law", "level2_beta", "mechanism", "initial"});
    for (const char* key : {"local", "nonlocal", "initial"}) reject(root, key, "multilevel takes its ingredients under model.params");
    const auto q = parse_motion(motion, "/motion", n);
    const SiteSpace s_space = at_path(pp + "/s_sites", [&] {
      return SiteSpace(labels(require(params, pp, "s_sites"), pp + "/s_sites"));
    });
    const std::size_t ns = s_space.size();
    const auto s_q = params.contains("s_q") ? matrix(params.at("s_q"), pp + "/s_q", ns) : parse_motion(nullptr, "", ns);
    const double rate1 = number(params, pp, "level1_rate", 1.0);
    const CountLaw law1 = params.contains("level1_law") ? parse_count_law(params.at("level1_law"), pp + "/level1_law")
                                                        : CountLaw::critical_binary();
    const double beta2 = number(params, pp, "level2_beta", 1.0);
    const std::string mp = pp + "/mechanism";
    const Json& m = require(params, pp, "mechanism");
    allow_keys(m, mp, {"kind", "extra_samples", "subset"});
    const std::string kind = text(require(m, mp, "kind"), mp + "/kind");
    zoo::Level2Mechanism mech;
    if (kind == "empirical-sample") {
      allow_keys(m, mp, {"kind", "extra_samples"});
      mech = zoo::Level2Mechanism::empirical_sample(
          m.contains("extra_samples") ? parse_count_law(m.at("extra_samples"), mp + "/extra_samples") : CountLaw::fixed(1));
    } else if (kind == "restriction") {
      allow_keys(m, mp, {"kind", "subset"});
      std::vector<bool> subset(ns, false);
      for (const auto& label : labels(require(m, mp, "subset"), mp + "/subset")) {
        subset[at_path(mp + "/subset", [&] { return s_space.index_of(label); })] = true;
      }
      mech = zoo::Level2Mechanism::restriction(std::move(subset));
    } else {
      throw ConfigError(mp + "/kind", "unknown level-2 mechanism '" + kind + "'");
    }
    run.multilevel = at_path(pp, [&] { return zoo::make_multilevel(space, q, s_space, s_q, rate1, law1, beta2, mech); });
    zoo::MultilevelState init;
    const std::string ip = pp + "/initial";
    const Json& is = array(require(params, pp, "initial"), ip);
    for (std::size_t i = 0; i < is.size(); ++i) {
      const std::string ep = join(ip, i);
      allow_keys(is[i], ep, {"island", "counts"});
      const std::string island = text(require(is[i], ep, "island"), ep + "/island");
      zoo::Level2Particle p;
      p.island = static_cast<std::uint32_t>(at_path(ep + "/island", [&] { return space.index_of(island); }));
      const std::string cp = ep + "/counts";
      const Json& cs = array(require(is[i], ep, "counts"), cp);
      if (cs.size() != ns) throw ConfigError(cp, "expected one count per site of S");
      for (std::size_t s = 0; s < ns; ++s) p.counts.push_back(unsigned_int(cs[s], join(cp, s)));
      if (zoo::total(p.counts) == 0) throw ConfigError(cp, "sub-population must be non-empty");
      init.particles.push_back(std::move(p));
    }
    run.multilevel_init = std::move(init);
    // Functionals act on the flattened islands x S space.
    std::vector<std::string> flat;
    for (const auto& e : space.labels()) {
      for (const auto& s : s_space.labels()) flat.push_back(e + "/" + s);
    }
    run.spec = LimitSystemSpec{SiteSpace(std::move(flat)), MotionGenerator::still(n * ns), LocalMechanism::zero(n * ns),
                               NonlocalMechanism::none(n * ns)};
  } else {
    throw ConfigError("/model/name", "unknown model '" + run.model + "'");
  }
}

inline Json apply_overrides(Json root, const Overrides& o) {
  if (!root.is_object()) return root;
  auto& e = root["experiment"];
  if (e.is_null()) e = Json::object();
  if (!e.is_object()) return root;
  if (o.seed) e["master_seed"] = *o.seed;
  if (o.replicates) e["replicates"] = *o.replicates;
  if (!o.k.empty()) {
    Json ks = Json::array();
    for (long k : o.k) {
      if (k < 1) throw ConfigError("/experiment/k", "k must be >= 1");
      ks.push_back(static_cast<std::uint64_t>(k));
    }
    e["k"] = ks;
  }
  if (o.method) {
    auto& s = root["solver"];
    if (s.is_null()) s = Json::object();
    if (s.is_object()) s["method"] = *o.method;
  }
  return root;
}

}  // namespace detail

// Parses JSON text; syntax errors report line and column.
inline Json parse_document(const std::string& text, const std::string& source = "config") {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string reason = e.what();
    if (const auto p = reason.find("parse error"); p != std::string::npos) reason = reason.substr(p);
    throw ValidationError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + reason);
  } catch (const Json::out_of_range& e) {
    // numeric overflow such as 1e999: numbers must be finite
    throw ValidationError(source + ": " + e.what());
  }
}

inline RunConfig load_document(const Json& document, const Overrides& overrides = {}) {
  const Json root = detail::apply_overrides(document, overrides);
  detail::allow_keys(root, "", {"scenario_id", "space", "motion", "local", "nonlocal", "initial", "experiment", "solver", "model"});
  RunConfig run;
  if (root.contains("scenario_id")) run.scenario_id = detail::text(root.at("scenario_id"), "/scenario_id");
  detail::build_model(root, run);
  const std::size_t n = run.spec.size();
  if (!run.multilevel) run.initial = detail::parse_initial(detail::optional_section(root, "initial"), "/initial", run.spec.space);
  run.experiment = detail::parse_experiment(detail::optional_section(root, "experiment"), "/experiment", n);
  run.solver = detail::parse_solver(detail::optional_section(root, "solver"), "/solver", run.age_step);
  run.canonical = root.dump();
  run.hash = Fnv1a().text(run.canonical).value();
  return run;
}

inline RunConfig load_text(const std::string& text, const Overrides& overrides = {}, const std::string& source = "config") {
  return load_document(parse_document(text, source), overrides);
}

inline RunConfig load_file(const std::string& path, const Overrides& overrides = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_text(buf.str(), overrides, path);
}

}  // namespace superbranch::config
