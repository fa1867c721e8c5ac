// Command-line front end: run, sufficient-cluster, bounds, validate-config.

#include "afo/harness/commands.hpp"
#include "afo/harness/config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace afo::harness;

struct Common {
  std::string config;
  std::string out;
  int jobs = 1;
  std::optional<std::uint64_t> seed_override;
};

void add_common(CLI::App* cmd, Common& c, bool with_out, bool with_jobs) {
  cmd->add_option("--config", c.config, "experiment configuration (TOML)")->required();
  if (with_out) cmd->add_option("--out", c.out, "output directory (default: experiment.output_dir)");
  if (with_jobs) cmd->add_option("--jobs", c.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  cmd->add_option("--seed-override", c.seed_override, "replace the configured seed list by this seed");
}

std::optional<ExperimentConfig> load(const Common& c) {
  try {
    auto cfg = load_config(c.config);
    if (c.seed_override) {
      cfg.experiment.seeds = {*c.seed_override};
      if (auto errors = validate(cfg); !errors.empty()) throw ConfigError(std::move(errors));
    }
    return cfg;
  } catch (const ConfigError& e) {
    for (const auto& f : e.errors()) std::cerr << "config error: " << f.field << ": " << f.message << "\n";
    return std::nullopt;
  }
}

std::optional<std::filesystem::path> out_dir(const Common& c, const ExperimentConfig& cfg) {
  if (!c.out.empty()) return std::filesystem::path(c.out);
  if (!cfg.experiment.output_dir.empty()) return std::filesystem::path(cfg.experiment.output_dir);
  std::cerr << "config error: experiment.output_dir: not set and no --out given\n";
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"All-for-one collaborative SGD experiments"};
  app.require_subcommand(1);

  Common run_opts, sc_opts, bounds_opts, validate_opts;
  auto* run = app.add_subcommand("run", "run every (algorithm, seed) pair and write CSVs plus a manifest");
  add_common(run, run_opts, true, true);
  auto* sc = app.add_subcommand("sufficient-cluster", "sweep eps and write sufficient-cluster sizes");
  add_common(sc, sc_opts, true, false);
  auto* bounds = app.add_subcommand("bounds", "evaluate excess-loss bound curves and sample complexity");
  add_common(bounds, bounds_opts, true, false);
  auto* val = app.add_subcommand("validate-config", "parse and check a configuration");
  add_common(val, validate_opts, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*val) {
      auto cfg = load(validate_opts);
      if (!cfg) return kExitConfigError;
      std::cout << "valid: " << cfg->experiment.name << " (config_hash " << config_hash(*cfg) << ")\n";
      return kExitOk;
    }
    Common& opts = *run ? run_opts : *sc ? sc_opts : bounds_opts;
    auto cfg = load(opts);
    if (!cfg) return kExitConfigError;
    auto dir = out_dir(opts, *cfg);
    if (!dir) return kExitConfigError;
    if (*run) return cli_run(*cfg, *dir, opts.jobs, std::cout, std::cerr);
    if (*sc) return cli_sufficient_cluster(*cfg, *dir, std::cout, std::cerr);
    return cli_bounds(*cfg, *dir, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
