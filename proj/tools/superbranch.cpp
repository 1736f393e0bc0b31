#include <CLI11.hpp>

#include <iostream>
#include <limits>
#include <string>

#include "superbranch/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Branching particle systems and their superprocess limits"};
  app.require_subcommand(1);
  superbranch::cli::Options opt;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  std::string method;

  auto add_common = [&](CLI::App* sub, bool with_k) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed, overrides experiment.master_seed");
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    sub->add_option("--method", method, "cumulant solver")->check(CLI::IsMember({"rk4-ode", "picard-mild"}));
    if (with_k) {
      sub->add_option("--replicates", replicates, "replicates per k, overrides experiment.replicates")
          ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
      sub->add_option("--k", opt.overrides.k, "particle density, repeatable; overrides experiment.k")
          ->check(CLI::Range(1L, std::numeric_limits<long>::max()));
    }
  };
  auto* simulate = app.add_subcommand("simulate", "run replicates and write per-snapshot functionals");
  add_common(simulate, true);
  simulate->add_flag("--events", opt.events, "also write events.csv for replicate 0 of the first k");
  add_common(app.add_subcommand("compare", "simulate and compare with the limit Laplace functional"), true);
  add_common(app.add_subcommand("solve", "write the cumulant grid V_t f"), false);
  add_common(app.add_subcommand("moments", "write T_t f and U_t f grids and the excessive gap"), false);
  app.add_subcommand("zoo", "list models and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : superbranch::cli::kValidation;
  }
  for (auto* sub : app.get_subcommands()) opt.command = sub->get_name();
  for (auto* sub : app.get_subcommands()) {
    auto given = [sub](const char* name) {
      const auto* o = sub->get_option_no_throw(name);
      return o != nullptr && o->count() > 0;
    };
    if (given("--seed")) opt.overrides.seed = seed;
    if (given("--replicates")) opt.overrides.replicates = replicates;
    if (given("--method")) opt.overrides.method = method;
  }
  return superbranch::cli::run(opt, std::cout, std::cerr);
}
