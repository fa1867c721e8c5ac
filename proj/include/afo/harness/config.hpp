#pragma once

#include "afo/objectives.hpp"
#include "afo/optimizer.hpp"
#include "afo/theory.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace afo::harness {

struct FieldError {
  std::string field;  // dotted path, e.g. "algorithms[2].lambda"
  std::string message;
};

/// Thrown for unreadable, malformed or invalid configuration files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

struct ExperimentSection {
  std::string name = "experiment";
  std::int64_t horizon = 100;
  std::int64_t log_every = 1;
  std::vector<std::uint64_t> seeds{127};
  std::string output_dir;  // empty: must be given on the command line
  ThresholdExponent threshold_exponent = ThresholdExponent::two;
  double divergence_threshold = 1e12;
  friend bool operator==(const ExperimentSection&, const ExperimentSection&) = default;
};

struct ObjectiveSection {
  ObjectiveKind kind = ObjectiveKind::lsr;
  std::int64_t dim = 2;
  std::int64_t n_clients = 20;
  std::int64_t n_clusters = 2;
  std::int64_t batch_size = 2;   // b, LSR minibatch
  std::int64_t b_alpha = 1;      // default ratio-estimation batch
  double noise_sigma = 0.0;      // quadratic gradient noise
  double spectrum_min = 1.0;
  double spectrum_max = 1.0;
  double optimum_scale = 1.0;
  friend bool operator==(const ObjectiveSection&, const ObjectiveSection&) = default;
};

struct CriterionSection {
  Criterion::Kind kind = Criterion::Kind::continuous;
  double lambda = 0.5;
  friend bool operator==(const CriterionSection&, const CriterionSection&) = default;
};

enum class ScheduleKind { constant, horizon_dependent, decreasing };

/// Constant steps are eta, or eta_fraction / beta_max when eta is unset.
struct ScheduleSection {
  ScheduleKind kind = ScheduleKind::constant;
  std::optional<double> eta;
  double eta_fraction = 0.5;
  double c = 2.0;
  /// horizon-dependent only; unset values are derived from the population.
  std::optional<double> eps0;
  std::optional<double> sigma_suf_sq;
  friend bool operator==(const ScheduleSection&, const ScheduleSection&) = default;
};

enum class AlgoKind { all_for_one, oracle, local, fedavg };

struct AlgorithmEntry {
  std::string name;
  AlgoKind kind = AlgoKind::all_for_one;
  /// all_for_one: override of [criterion]
  std::optional<CriterionSection> criterion;
  /// "estimated" (stochastic, b_alpha draws) or "exact"
  bool exact_ratios = false;
  std::optional<std::int64_t> b_alpha;
  std::int64_t reestimate_every = 1;
  std::int64_t local_steps = 1;  // fedavg
  friend bool operator==(const AlgorithmEntry&, const AlgorithmEntry&) = default;
};

struct SufficientClusterSection {
  std::vector<double> v{1.0, 0.1, 0.01, 0.001};
  std::int64_t n_clients = 20;
  std::int64_t dim = 2;
  double sigma = 1.0;
  std::int64_t focal = 0;
  double eps_min = 1e-6;
  double eps_max = 1e2;
  std::int64_t eps_points = 50;
  HeterogeneityScaling scaling = HeterogeneityScaling::hessian;
  friend bool operator==(const SufficientClusterSection&, const SufficientClusterSection&) = default;
};

struct BoundsSection {
  StepRegime regime = StepRegime::decreasing;
  double beta = 1.0;
  double mu = 1.0;
  double eps0 = 1.0;
  double sigma_suf_sq = 1.0;
  double eta = 0.1;
  double c = 2.0;
  std::int64_t t_min = 1;
  std::int64_t t_max = 100000;
  std::int64_t t_points = 50;
  std::vector<double> targets{0.1};
  friend bool operator==(const BoundsSection&, const BoundsSection&) = default;
};

struct ExperimentConfig {
  ExperimentSection experiment;
  ObjectiveSection objective;
  CriterionSection criterion;
  ScheduleSection schedule;
  std::vector<AlgorithmEntry> algorithms;
  std::optional<SufficientClusterSection> sufficient_cluster;
  std::optional<BoundsSection> bounds;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Range checks. Returns every problem found; empty when valid.
std::vector<FieldError> validate(const ExperimentConfig& cfg);
/// Additional requirements of the `run` subcommand (at least one algorithm).
std::vector<FieldError> validate_for_run(const ExperimentConfig& cfg);

/// Canonical TOML text. parse_config(to_toml(c)) == c for every valid c.
std::string to_toml(const ExperimentConfig& cfg);

/// First 16 hex digits of SHA-256 over to_toml(cfg).
std::string config_hash(const ExperimentConfig& cfg);

std::string to_string(AlgoKind kind);
std::string to_string(ScheduleKind kind);

}  // namespace afo::harness
