#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace superbranch::zoo {

struct ParamInfo {
  std::string name;
  std::string type;
  std::string description;
};

struct ModelInfo {
  std::string name;
  std::string summary;
  std::vector<ParamInfo> params;
};

// Model names accepted in the `model` section of a config, sorted by name.
inline std::vector<ModelInfo> model_registry() {
  std::vector<ModelInfo> models{
      {"rebirth",
       "parent survives every non-local branch; local mechanism forced to -beta z",
       {{"(none)", "-", "uses the space, motion and nonlocal sections; local must be absent"}}},
      {"ktype",
       "multitype system flattened onto E x {1..kappa}",
       {{"types", "list of {q, local, nonlocal}", "per-type ingredients on the base space"},
        {"transition", "kappa x kappa matrix", "row i: type distribution of offspring of a type-i parent"}}},
      {"controlled-immigration",
       "type-1 mass drives immigration of type 2",
       {{"q1", "matrix", "type-1 motion"},
        {"q2", "matrix", "type-2 motion"},
        {"phi1", "local section", "type-1 local mechanism"},
        {"phi2", "local section", "type-2 local mechanism"}}},
      {"mass-structured",
       "positions on E with a deterministic mass coordinate a exp(growth t)",
       {{"factor", "number > 0", "offspring mass = parent mass * factor"},
        {"growth", "number", "mass growth rate c"},
        {"initial_mass", "number > 0", "mass of every initial particle"}}},
      {"multilevel",
       "level-2 particles carry level-1 sub-populations over S (simulation only)",
       {{"s_sites", "list of labels", "sites of S"},
        {"s_q", "matrix", "level-1 motion within S (optional)"},
        {"level1_rate", "number >= 0", "level-1 branching rate"},
        {"level1_law", "count law", "level-1 offspring law, default critical-binary"},
        {"level2_beta", "number >= 0", "level-2 branching rate"},
        {"mechanism", "object", "{kind: empirical-sample, extra_samples} or {kind: restriction, subset}"},
        {"initial", "list of {island, counts}", "initial level-2 particles"}}},
      {"age-reproduction",
       "rebirth system with ageing particles and deterministic lifetime",
       {{"beta", "number >= 0", "branching rate (constant in age)"},
        {"lifetime", "number > 0 or null", "age at removal; null for infinite"},
        {"d", "number in [0,1]", "single-offspring weight"},
        {"atoms", "list of {u, n}", "Poisson offspring atoms"}}},
  };
  std::sort(models.begin(), models.end(), [](const ModelInfo& a, const ModelInfo& b) { return a.name < b.name; });
  return models;
}

}  // namespace superbranch::zoo
