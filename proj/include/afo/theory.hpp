#pragma once

#include "afo/collaboration.hpp"
#include "afo/objectives.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afo {

/// Exponent applied to b_ik in the sufficient-cluster threshold
/// 1 - b_ik^p / (2 mu eps) - c_ik. The descent argument yields p = 2.
enum class ThresholdExponent { one = 1, two = 2 };

struct SufficientClusterReport {
  std::size_t focal = 0;
  double epsilon = 0.0;
  std::vector<std::size_t> members;
  /// +infinity when no client qualifies.
  double sigma_suf_sq = 0.0;

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }
};

/// (1 - b^p / (2 mu eps) - c)_+ for the pair (i, k).
double sufficient_ratio(double b, double c, double mu, double eps,
                        ThresholdExponent exponent = ThresholdExponent::two);

SufficientClusterReport sufficient_cluster(std::size_t focal, double eps, const HeterogeneityMatrix& hm,
                                           double mu, std::span<const double> sigmas,
                                           const Criterion& crit,
                                           ThresholdExponent exponent = ThresholdExponent::two);

/// sigma_suf^2 as eps -> infinity: (sum_k sigma_k^-2 psi((1 - c_ik)_+))^-1.
double sigma_suf_sq_limit_large_eps(std::size_t focal, const HeterogeneityMatrix& hm,
                                    std::span<const double> sigmas, const Criterion& crit);

enum class StepRegime { constant, horizon_dependent, decreasing };

std::string to_string(StepRegime regime);
std::optional<StepRegime> parse_regime(const std::string& s);

struct BoundInputs {
  double beta = 0.0;
  double mu = 0.0;
  double eps0 = 0.0;
  double sigma_suf_sq = 0.0;
  std::int64_t horizon = 0;
  /// step size eta (constant) or C (decreasing); unused for horizon-dependent.
  double eta_or_c = 0.0;
};

struct BoundEvaluation {
  StepRegime regime = StepRegime::constant;
  double bound = 0.0;
  BoundInputs inputs;
  /// step size the row prescribes (constant: eta; horizon-dependent: the
  /// log formula; decreasing: C / (mu T)).
  double step_size = 0.0;
};

/// Upper bound on the excess loss after T steps for the three step-size rows:
///   constant          (1 - eta mu)^T eps0 + eta beta sigma^2 / (2 mu)
///   horizon-dependent beta sigma^2 / (2 mu^2 T) * (ln(2 T mu^2 eps0 / sigma^2) + 1)
///   decreasing        max(beta sigma^2 C^2 / (2 mu^2 (C - 1)), eps0) / T
/// Throws std::invalid_argument naming the violated constraint.
BoundEvaluation table1_bound(StepRegime regime, const BoundInputs& in);

/// Step size eta = ln(2 T mu^2 eps0 / (beta sigma^2)) / (mu T) of the
/// horizon-dependent row.
double horizon_step_size(double beta, double mu, double eps0, double sigma_suf_sq, std::int64_t horizon);

/// ceil(beta sigma_suf^2 C^2 / ((C - 1) 2 mu^2 eps)).
std::int64_t sample_complexity(double eps, double beta, double mu, double sigma_suf_sq, double c);

struct DescentBound {
  /// -||grad R_i||^2 term taken at theta^{t-1}.
  double rhs_previous = 0.0;
  /// the same term at theta^t; uses the supplied
  /// mean of ||grad R_i(theta^t)||^2.
  double rhs_new = 0.0;
};

/// Right-hand side of the one-step descent inequality
///   (eta/2) sum_k alpha_k (||grad R_k - grad R_i||^2 - ||grad R_i||^2)
///     + eta beta sum_k sigma_k^2 alpha_k^2
/// with gradients evaluated at the focal client's previous parameters.
/// Requires eta < 1 / (beta sum_k alpha_k).
DescentBound descent_bound_rhs(double eta, std::span<const double> alpha, std::size_t focal,
                               std::span<const VectorD> grads_prev, double grad_sq_new,
                               std::span<const double> sigmas, double beta);

struct NestingResult {
  bool nested = true;
  /// Description of the first violation, empty when nested.
  std::string violation;
};

/// Along a decreasing eps grid, clusters must shrink (weakly) and sigma_suf^2
/// must grow (weakly).
NestingResult nesting_check(std::size_t focal, std::span<const double> eps_grid,
                            const HeterogeneityMatrix& hm, double mu, std::span<const double> sigmas,
                            const Criterion& crit, ThresholdExponent exponent = ThresholdExponent::two);

/// One observation of a running client: its current excess loss and the set
/// of clients with positive weight computed at the same parameters.
struct NestingSample {
  std::int64_t iteration = 0;
  double excess = 0.0;
  std::vector<std::size_t> active_set;
};

/// Runtime mode: the sufficient cluster at the current excess loss must be
/// contained in the active set. Samples with zero excess are skipped (the
/// inclusion is only claimed for eps > 0).
NestingResult nesting_runtime_check(std::size_t focal, std::span<const NestingSample> trajectory,
                                    const HeterogeneityMatrix& hm, double mu,
                                    std::span<const double> sigmas, const Criterion& crit,
                                    ThresholdExponent exponent = ThresholdExponent::two);

/// 2 sqrt(2 eps0 beta sigma_suf^2 / T): bound on the average squared gradient
/// norm in the smooth non-convex case.
double nonconvex_rate_bound(double eps0, double beta, double sigma_suf_sq, std::int64_t horizon);

}  // namespace afo
