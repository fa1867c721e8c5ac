#pragma once

#include "afo/numerics.hpp"
#include "afo/objectives.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace afo {

/// Criterion function phi turning similarity ratios into weight factors,
/// together with psi(x) = x * phi(x).
///
///   binary:     phi(x) = lambda * 1{x >= lambda},  lambda in (0, 1]
///   continuous: phi(x) = x
class Criterion {
 public:
  enum class Kind { binary, continuous };

  static Criterion binary(double lambda = 0.5);
  static Criterion continuous();

  Kind kind() const { return kind_; }
  double lambda() const { return lambda_; }
  std::string name() const;

  double phi(double x) const;
  double psi(double x) const { return x * phi(x); }

 private:
  Criterion(Kind kind, double lambda) : kind_(kind), lambda_(lambda) {}
  Kind kind_;
  double lambda_;
};

/// (1 - ||grad_k - grad_i||^2 / ||grad_i||^2)_+ ; when grad_i is zero the
/// ratio is 1 if grad_k is also zero and 0 otherwise.
double similarity_ratio(const VectorD& grad_i, const VectorD& grad_k);

/// Exact ratios of focal client i against every client, from exact gradients.
std::vector<double> exact_ratios(std::size_t focal, const VectorD& params,
                                 std::span<const ClientObjective> objectives);

struct CollaborationState {
  std::vector<double> alpha;
  double sigma_eff_sq = 0.0;  // (sum_k psi(r_k) / sigma_k^2)^-1
  double sigma_phi_sq = 0.0;  // (sum_k phi(r_k) / sigma_k^2)^-1
  std::vector<std::size_t> active_set;

  double weight_mass() const;
  /// sigma_phi^2 / sigma_psi^2, i.e. 1 / weight_mass().
  double step_ratio() const { return sigma_phi_sq / sigma_eff_sq; }
};

struct NoAdmissibleCollaborator : std::runtime_error {
  NoAdmissibleCollaborator() : std::runtime_error("no admissible collaborator: every psi(r_ik) is 0") {}
};

/// alpha_k = phi(r_k) * sigma_eff^2 / sigma_k^2. Throws NoAdmissibleCollaborator
/// when every psi(r_k) vanishes.
CollaborationState compute_weights(std::span<const double> ratios, std::span<const double> sigmas,
                                   const Criterion& crit);
std::optional<CollaborationState> try_compute_weights(std::span<const double> ratios,
                                                      std::span<const double> sigmas,
                                                      const Criterion& crit);

struct RatioEstimate {
  std::vector<double> ratios;
  /// Z_i was exactly zero: peers set to 0, self to 1.
  bool degenerate = false;
  long gradient_evaluations = 0;
};

/// Stochastic ratio estimate at the focal parameters from b_alpha fresh
/// gradient pairs per client:
///   Z_ik = ||mean_j (g_i^j - g_k^j)||^2,  Z_i = ||mean_j g_i^j||^2,
///   r_ik = (1 - Z_ik / Z_i)_+.
/// The focal draws g_i^j are shared by every pair, so r_ii is exactly 1.
RatioEstimate estimate_ratios(std::size_t focal, const VectorD& params,
                              std::span<const ClientObjective> oracles, int b_alpha,
                              RngStream& stream);

struct RatioBounds {
  double lower = 0.0;
  double upper = 1.0;
};

/// Analytic bounds on sigma_phi^2 / sigma_psi^2: lambda for the binary
/// criterion, sigma_i^-2 (sum_k sigma_k^-2)^-1 for the continuous one, and 1
/// from above. The continuous bound assumes the focal client's own ratio is 1.
RatioBounds step_size_ratio_bounds(std::size_t focal, const Criterion& crit,
                                   std::span<const double> sigmas);

}  // namespace afo
