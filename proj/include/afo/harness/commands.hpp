#pragma once

#include "afo/harness/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace afo::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;

/// Everything run_experiment needs for one seed of a configuration.
struct PreparedPopulation {
  Population population;
  std::vector<double> sigmas;  // weights use these
  std::vector<double> betas;
  std::vector<double> estimated_sigmas;  // LSR empirical noise at theta0; empty for quadratics
  double beta_max = 0.0;
  double mu_min = 0.0;
  bool sigma_fallback = false;  // some sigma was 0, all replaced by 1
};

PreparedPopulation prepare_population(const ExperimentConfig& cfg, std::uint64_t seed);

AlgorithmSpec make_algorithm(const ExperimentConfig& cfg, const AlgorithmEntry& entry,
                             const PreparedPopulation& pop);

StepSchedule make_schedule(const ExperimentConfig& cfg, const PreparedPopulation& pop);

struct RunOutput {
  std::string run_id;
  std::string algo;
  std::uint64_t seed = 0;
  std::string csv;
  RunRecord record;
  PreparedPopulation prepared;
};

RunOutput execute_run(const ExperimentConfig& cfg, const AlgorithmEntry& entry, std::uint64_t seed);

/// Runs every (algorithm, seed) pair with up to `jobs` threads. Writes
/// `<run_id>.csv` files, `config.toml` and `manifest.json` into out_dir.
/// Returns an exit code; diagnostics go to `err`.
int cli_run(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int jobs, std::ostream& log,
            std::ostream& err);

struct SufficientClusterRow {
  double v = 0.0;
  double epsilon = 0.0;
  std::size_t cluster_size = 0;
  double sigma_suf_sq = 0.0;
};

/// Client optima theta* + xi_k with xi_k ~ N(0, v^2 I) around a common
/// theta* ~ N(0, I), curvature I, heterogeneity constants from the quadratic
/// closed forms, binary/continuous criterion from the config. One row per
/// (v, eps) on a log-spaced eps grid.
std::vector<SufficientClusterRow> sufficient_cluster_curves(const ExperimentConfig& cfg, std::uint64_t seed);

int cli_sufficient_cluster(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log,
                           std::ostream& err);

struct BoundRow {
  std::int64_t horizon = 0;
  double bound = 0.0;
  double step_size = 0.0;
};

std::vector<BoundRow> bound_curve(const BoundsSection& b);

int cli_bounds(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log,
               std::ostream& err);

/// Log-spaced grid of n points from lo to hi, both included.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

}  // namespace afo::harness
