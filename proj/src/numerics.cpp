#include "afo/numerics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace afo {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t stream_key(std::uint64_t seed, const StreamId& id) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ id.client);
  h = splitmix64(h ^ static_cast<std::uint64_t>(id.purpose));
  h = splitmix64(h ^ id.substream);
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, StreamId id)
    : seed_(seed), id_(id), engine_(stream_key(seed, id)) {}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform() { return uniform_(engine_); }

VectorD RngStream::standard_normal(Eigen::Index d) {
  VectorD z(d);
  for (Eigen::Index j = 0; j < d; ++j) z[j] = normal_(engine_);
  return z;
}

RngStream RngStream::derive(std::uint64_t index) const {
  StreamId child = id_;
  child.substream = splitmix64(id_.substream ^ splitmix64(index + 0x51ed270b27c5a3f1ULL));
  return RngStream(seed_, child);
}

bool is_symmetric(const MatrixD& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

VectorD symmetric_eigenvalues(const MatrixD& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw std::invalid_argument("symmetric_eigenvalues: matrix must be square and non-empty");
  }
  Eigen::SelfAdjointEigenSolver<MatrixD> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("symmetric_eigenvalues: eigen-decomposition failed");
  }
  return solver.eigenvalues();
}

bool is_spd(const MatrixD& m, double tol) {
  if (!is_symmetric(m, 1e-10)) return false;
  return symmetric_eigenvalues(m)[0] > tol;
}

double spectral_norm(const MatrixD& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixD> svd(m);
  return svd.singularValues()[0];
}

MatrixD psd_factor(const MatrixD& covariance) {
  if (covariance.rows() != covariance.cols()) {
    throw std::invalid_argument("psd_factor: covariance must be square");
  }
  if (!is_symmetric(covariance, 1e-10)) {
    throw std::invalid_argument("psd_factor: covariance must be symmetric");
  }
  const Eigen::Index d = covariance.rows();
  Eigen::LLT<MatrixD> llt(covariance);
  if (llt.info() == Eigen::Success) {
    MatrixD L = llt.matrixL();
    if (L.allFinite()) return L;
  }

  Eigen::LDLT<MatrixD> ldlt(covariance);
  if (ldlt.info() != Eigen::Success) {
    throw std::runtime_error("psd_factor: LDLT factorization failed");
  }
  const double scale = std::max(1.0, covariance.diagonal().cwiseAbs().maxCoeff());
  VectorD D = ldlt.vectorD();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (D[j] < -1e-12 * scale) {
      throw std::invalid_argument("psd_factor: covariance is not positive semi-definite");
    }
    D[j] = D[j] > 0.0 ? std::sqrt(D[j]) : 0.0;
  }
  // covariance = P^T L D L^T P
  MatrixD L = ldlt.matrixL();
  MatrixD F = L * D.asDiagonal();
  return ldlt.transpositionsP().transpose() * F;
}

GaussianSampler::GaussianSampler(VectorD mean, const MatrixD& covariance)
    : mean_(std::move(mean)), factor_(psd_factor(covariance)) {
  if (factor_.rows() != mean_.size()) {
    throw std::invalid_argument("GaussianSampler: mean has length " + std::to_string(mean_.size()) +
                                " but covariance is " + std::to_string(factor_.rows()) + "x" +
                                std::to_string(factor_.cols()));
  }
}

VectorD GaussianSampler::sample(RngStream& stream) const {
  return mean_ + factor_ * stream.standard_normal(mean_.size());
}

VectorD sample_gaussian_vector(RngStream& stream, const VectorD& mean, const MatrixD& covariance) {
  return GaussianSampler(mean, covariance).sample(stream);
}

MatrixD sample_orthogonal_matrix(RngStream& stream, Eigen::Index d) {
  if (d < 1) throw std::invalid_argument("sample_orthogonal_matrix: d must be >= 1");
  MatrixD g(d, d);
  for (Eigen::Index c = 0; c < d; ++c)
    for (Eigen::Index r = 0; r < d; ++r) g(r, c) = stream.normal();
  Eigen::HouseholderQR<MatrixD> qr(g);
  MatrixD q = qr.householderQ() * MatrixD::Identity(d, d);
  const MatrixD& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

void require_same_size(const VectorD& a, const VectorD& b, std::string_view what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

bool all_finite(const VectorD& v) { return v.allFinite(); }

}  // namespace afo
