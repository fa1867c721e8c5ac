#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace afo {

using VectorD = Eigen::VectorXd;
using MatrixD = Eigen::MatrixXd;

/// Purpose tags that separate the random streams owned by one client.
enum class StreamPurpose : std::uint32_t {
  setup = 1,      // objective construction (optima, rotations)
  init = 2,       // initial parameters
  step = 3,       // stochastic gradients consumed by the optimizer step
  estimate = 4,   // extra draws used to estimate similarity ratios
  probe = 5,      // constant estimation / validation probes
};

struct StreamId {
  std::uint64_t client = 0;
  StreamPurpose purpose = StreamPurpose::setup;
  std::uint64_t substream = 0;

  friend bool operator==(const StreamId&, const StreamId&) = default;
};

/// Deterministic random stream derived from (master seed, stream id).
///
/// The engine state is seeded by hashing the tuple with SplitMix64, so any
/// number of per-client streams can be created from a single master seed
/// without coordination. A stream is single-owner; distinct streams may be
/// advanced from different threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id);

  std::uint64_t seed() const { return seed_; }
  const StreamId& id() const { return id_; }

  double normal();
  double uniform();  // [0, 1)
  VectorD standard_normal(Eigen::Index d);

  /// Child stream keyed by an extra index (e.g. the iteration number).
  RngStream derive(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  StreamId id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// Factor F with F * F^T == covariance, for symmetric PSD inputs.
///
/// Positive-definite inputs use a plain Cholesky factor. Semi-definite inputs
/// fall back to a pivoted LDL^T with tiny negative pivots (>= -1e-12 relative
/// to the largest diagonal entry) clamped to zero; anything more negative is
/// rejected as not PSD.
MatrixD psd_factor(const MatrixD& covariance);

/// Reusable sampler for N(mean, covariance).
class GaussianSampler {
 public:
  GaussianSampler(VectorD mean, const MatrixD& covariance);

  Eigen::Index dim() const { return mean_.size(); }
  VectorD sample(RngStream& stream) const;
  const MatrixD& factor() const { return factor_; }

 private:
  VectorD mean_;
  MatrixD factor_;
};

VectorD sample_gaussian_vector(RngStream& stream, const VectorD& mean, const MatrixD& covariance);

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q.
MatrixD sample_orthogonal_matrix(RngStream& stream, Eigen::Index d);

bool is_symmetric(const MatrixD& m, double tol = 1e-12);
/// All eigenvalues > tol (after a symmetry check).
bool is_spd(const MatrixD& m, double tol = 1e-9);

/// Eigenvalues of a symmetric matrix, ascending.
VectorD symmetric_eigenvalues(const MatrixD& m);

/// Largest singular value.
double spectral_norm(const MatrixD& m);

void require_same_size(const VectorD& a, const VectorD& b, std::string_view what);
bool all_finite(const VectorD& v);

}  // namespace afo
