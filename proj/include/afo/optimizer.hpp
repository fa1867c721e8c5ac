#pragma once

#include "afo/collaboration.hpp"
#include "afo/numerics.hpp"
#include "afo/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace afo {

/// Adaptive All-for-one. Ratios come from exact gradients when b_alpha is
/// empty, otherwise from the stochastic estimator with b_alpha draws.
struct AllForOneAlgo {
  Criterion criterion = Criterion::continuous();
  std::optional<int> b_alpha;
  int reestimate_every = 1;
};

/// Uniform weights 1/c inside known clusters.
struct OracleAlgo {
  std::vector<std::size_t> cluster_of;
};

struct LocalAlgo {};

struct FedAvgAlgo {
  int local_steps = 1;
};

using AlgorithmKind = std::variant<AllForOneAlgo, OracleAlgo, LocalAlgo, FedAvgAlgo>;

struct AlgorithmSpec {
  std::string name;
  AlgorithmKind kind;
};

struct ConstantStep {
  double eta = 0.0;
};
struct HorizonStep {
  std::int64_t horizon = 0;
  double mu = 0.0;
  double beta = 0.0;
  double eps0 = 0.0;
  double sigma_suf_sq = 0.0;
};
/// eta_t = C / (mu t)
struct DecreasingStep {
  double c = 2.0;
  double mu = 0.0;
};

/// Step-size schedule. Every realized step is additionally capped at
/// 1 / (beta * sum_k alpha_ik), which for similarity-based weights is the
/// (sigma_phi / sigma_psi)^2 / beta condition.
class StepSchedule {
 public:
  using Kind = std::variant<ConstantStep, HorizonStep, DecreasingStep>;

  explicit StepSchedule(Kind kind);

  /// Scheduled step at iteration t >= 1, before the safety cap.
  double eta(std::int64_t t) const;
  const Kind& kind() const { return kind_; }
  std::string describe() const;

 private:
  Kind kind_;
  double horizon_eta_ = 0.0;
};

struct StepResult {
  VectorD params;
  long gradient_evaluations = 0;
  bool fallback = false;
};

/// theta - eta * sum_k alpha_k g_k(theta), one fresh stochastic gradient per
/// active client, all evaluated at the focal parameters. An empty active set
/// falls back to a local step with alpha_ii = 1.
StepResult afo_step(std::size_t focal, const VectorD& theta, const CollaborationState& weights,
                    std::span<const ClientObjective> oracles, double eta, RngStream& stream);

/// Uniform 1/c weights over the focal client's cluster.
CollaborationState oracle_weights(std::size_t focal, std::span<const std::size_t> cluster_of,
                                  std::span<const double> sigmas);

StepResult oracle_afo_step(std::size_t focal, const VectorD& theta,
                           std::span<const std::size_t> cluster_of,
                           std::span<const ClientObjective> oracles, double eta, RngStream& stream);

/// Each client runs local_steps SGD steps from the shared model, which is
/// replaced by the uniform average. streams[k] belongs to client k.
VectorD fedavg_round(const VectorD& global, std::span<const ClientObjective> objectives, double eta,
                     int local_steps, std::span<RngStream> streams, long* gradient_evaluations = nullptr);

struct MetricRow {
  std::int64_t iter = 0;
  std::size_t client = 0;
  double excess_loss = 0.0;
  double test_loss = 0.0;
  double grad_sq_norm = 0.0;
  std::size_t active_set_size = 0;
  double weight_mass = 0.0;
  double sigma_eff_sq = 0.0;
  double in_cluster_weight = 0.0;
  double out_cluster_weight = 0.0;
  std::int64_t grad_evals_total = 0;
};

struct Divergence {
  std::int64_t iteration = 0;
  std::size_t client = 0;
  double loss = 0.0;
};

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string schedule;
  std::int64_t capped_steps = 0;      // schedule step reduced by the safety cap
  std::int64_t fallback_steps = 0;    // empty active set, local step taken
  std::int64_t degenerate_estimates = 0;
  std::int64_t grad_evals_total = 0;
  double max_eta_times_cap_ratio = 0.0;  // max over steps of eta * beta * sum(alpha); <= 1
};

struct RunRecord {
  std::vector<MetricRow> rows;
  RunMetadata meta;
  std::optional<Divergence> divergence;
  std::vector<VectorD> final_params;
};

/// Per-step view handed to an observer before the client's update.
struct StepEvent {
  std::int64_t iteration = 0;
  std::size_t client = 0;
  const VectorD* theta_prev = nullptr;
  double excess_prev = 0.0;
  const CollaborationState* weights = nullptr;
  double eta = 0.0;
};

using StepObserver = std::function<void(const StepEvent&)>;

struct RunOptions {
  std::int64_t horizon = 1;
  std::int64_t log_every = 1;
  std::uint64_t seed = 0;
  /// Per-client noise scales used for the weights. Empty: taken as 1.
  std::vector<double> sigmas;
  /// Per-client smoothness used by the safety cap.
  std::vector<double> betas;
  /// Cluster labels used for the in/out-of-cluster weight metrics. Empty:
  /// every client in one cluster.
  std::vector<std::size_t> cluster_of;
  /// Initial parameters for every client (FedAvg uses the first). Empty: zeros.
  std::vector<VectorD> init;
  double divergence_threshold = 1e12;
  StepObserver observer;
};

RunRecord run_experiment(const AlgorithmSpec& spec, std::span<const ClientObjective> objectives,
                         const StepSchedule& schedule, const RunOptions& options);

}  // namespace afo
