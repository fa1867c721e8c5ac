#pragma once

#include "afo/numerics.hpp"

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace afo {

/// R(theta) = (theta + xi)^T A (theta + xi), with isotropic Gaussian gradient
/// noise whose total variance (trace of the covariance) is noise_sigma^2.
class QuadraticObjective {
 public:
  QuadraticObjective(MatrixD curvature, VectorD shift, double noise_sigma);

  Eigen::Index dim() const { return shift_.size(); }
  const MatrixD& curvature() const { return curvature_; }
  const VectorD& shift() const { return shift_; }
  double noise_sigma() const { return noise_sigma_; }

  double value(const VectorD& theta) const;
  VectorD gradient(const VectorD& theta) const;
  VectorD stochastic_gradient(const VectorD& theta, RngStream& stream) const;
  /// -xi; only meaningful when A is positive definite.
  VectorD minimizer() const { return -shift_; }
  double minimum() const { return 0.0; }

 private:
  MatrixD curvature_;
  VectorD shift_;
  double noise_sigma_;
};

/// Online least squares: x ~ N(0, H), y = <x, theta_star>, no label noise.
/// Expected loss (theta - theta_star)^T H (theta - theta_star).
class LsrObjective {
 public:
  LsrObjective(const MatrixD& feature_covariance, VectorD theta_star, int batch_size);

  Eigen::Index dim() const { return theta_star_.size(); }
  const MatrixD& feature_covariance() const { return covariance_; }
  const VectorD& theta_star() const { return theta_star_; }
  int batch_size() const { return batch_size_; }

  double value(const VectorD& theta) const;
  VectorD gradient(const VectorD& theta) const;
  /// Gradient of the mean squared loss over batch_size fresh samples.
  VectorD stochastic_gradient(const VectorD& theta, RngStream& stream) const;
  VectorD minimizer() const { return theta_star_; }
  double minimum() const { return 0.0; }

 private:
  MatrixD covariance_;
  VectorD theta_star_;
  int batch_size_;
  GaussianSampler features_;
};

using ClientObjective = std::variant<QuadraticObjective, LsrObjective>;

Eigen::Index dim(const ClientObjective& obj);
double value(const ClientObjective& obj, const VectorD& theta);
double excess_loss(const ClientObjective& obj, const VectorD& theta);
VectorD exact_gradient(const ClientObjective& obj, const VectorD& theta);
VectorD stochastic_gradient(const ClientObjective& obj, const VectorD& theta, RngStream& stream);
VectorD minimizer(const ClientObjective& obj);
/// Curvature matrix (A or H).
const MatrixD& curvature(const ClientObjective& obj);

struct ObjectiveConstants {
  double beta = 0.0;   // smoothness
  double mu = 0.0;     // strong convexity / PL
  double sigma = 0.0;  // gradient-noise bound
};

inline constexpr int kLsrSigmaProbes = 10'000;
inline constexpr double kLsrSigmaQuantile = 0.99;

/// beta = 2 lambda_max, mu = 2 lambda_min of the curvature. For quadratics
/// sigma is noise_sigma. LSR has no closed form, so sigma is the 99th
/// percentile of ||g - grad R|| over kLsrSigmaProbes draws at theta0, which
/// is then required.
ObjectiveConstants constants(const QuadraticObjective& obj);
ObjectiveConstants constants(const LsrObjective& obj, const VectorD& theta0, RngStream& stream);
ObjectiveConstants constants(const ClientObjective& obj, const std::optional<VectorD>& theta0,
                             RngStream* stream);

/// Pairwise (b_ik, c_ik) constants of the bounded-heterogeneity inequality
/// ||grad R_i - grad R_k||^2 <= b_ik^2 + c_ik ||grad R_i||^2.
struct HeterogeneityMatrix {
  MatrixD b;
  MatrixD c;

  std::size_t size() const { return static_cast<std::size_t>(b.rows()); }
  static HeterogeneityMatrix zeros(std::size_t n);
};

/// How the closed-form quadratic bounds are applied to R = (θ+ξ)^T A (θ+ξ).
///
/// The standard closed forms b = sqrt(2) ||M_k (xi_i - xi_k)||,
/// c = 2 ||I - M_k M_i^{-1}||^2 hold when M is the Hessian. Our objective has
/// Hessian 2A, so `hessian` uses M = 2A (b doubles, c is unchanged) and is
/// always a valid bound. `literal` plugs A in directly; it can under-estimate
/// b by a factor of two and is kept for comparison.
enum class HeterogeneityScaling { hessian, literal };

HeterogeneityMatrix heterogeneity_bounds(std::span<const QuadraticObjective> objs,
                                         HeterogeneityScaling scaling = HeterogeneityScaling::hessian);

struct HeterogeneityViolation {
  std::size_t i = 0;
  std::size_t k = 0;
  VectorD theta;
  double excess = 0.0;  // lhs - rhs
};

struct HeterogeneityReport {
  /// max over probes and pairs of lhs - rhs, with rhs relaxed by 1e-9 relative slack.
  double max_violation = 0.0;
  std::size_t violations = 0;
  std::optional<HeterogeneityViolation> first_violation;
  bool ok() const { return violations == 0; }
};

/// Probes `probes` random theta ~ N(0, probe_scale^2 I) and checks the
/// inequality for every ordered pair.
HeterogeneityReport validate_heterogeneity(std::span<const ClientObjective> objs,
                                           const HeterogeneityMatrix& hm, int probes,
                                           RngStream& stream, double probe_scale = 3.0);

enum class ObjectiveKind { quadratic, lsr };

/// Synthetic clustered population. Client i belongs to cluster i mod
/// n_clusters and every client of a cluster shares that cluster's optimum
/// (drawn from N(0, optimum_scale^2 I)). Curvature is P^T Diag(s) P with P
/// Haar-orthogonal and s drawn uniformly in [spectrum_min, spectrum_max]; the
/// default all-ones spectrum makes it the identity.
struct PopulationSpec {
  ObjectiveKind kind = ObjectiveKind::lsr;
  std::size_t n_clients = 20;
  Eigen::Index dim = 2;
  std::size_t n_clusters = 2;
  int batch_size = 2;          // LSR only
  double noise_sigma = 0.0;    // quadratic only
  double spectrum_min = 1.0;
  double spectrum_max = 1.0;
  double optimum_scale = 1.0;
};

struct Population {
  std::vector<ClientObjective> clients;
  std::vector<std::size_t> cluster_of;
  std::vector<VectorD> cluster_optima;
};

Population build_population(const PopulationSpec& spec, std::uint64_t seed);

}  // namespace afo
