#include "afo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace afo {

QuadraticObjective::QuadraticObjective(MatrixD curvature, VectorD shift, double noise_sigma)
    : curvature_(std::move(curvature)), shift_(std::move(shift)), noise_sigma_(noise_sigma) {
  if (curvature_.rows() != shift_.size() || curvature_.cols() != shift_.size()) {
    throw std::invalid_argument("QuadraticObjective: curvature must be d x d with d = shift length");
  }
  if (!is_symmetric(curvature_, 1e-10)) {
    throw std::invalid_argument("QuadraticObjective: curvature must be symmetric");
  }
  if (!(noise_sigma_ >= 0.0) || !std::isfinite(noise_sigma_)) {
    throw std::invalid_argument("QuadraticObjective: noise_sigma must be finite and >= 0");
  }
}

double QuadraticObjective::value(const VectorD& theta) const {
  require_same_size(theta, shift_, "QuadraticObjective::value");
  const VectorD u = theta + shift_;
  return u.dot(curvature_ * u);
}

VectorD QuadraticObjective::gradient(const VectorD& theta) const {
  require_same_size(theta, shift_, "QuadraticObjective::gradient");
  return 2.0 * (curvature_ * (theta + shift_));
}

VectorD QuadraticObjective::stochastic_gradient(const VectorD& theta, RngStream& stream) const {
  VectorD g = gradient(theta);
  if (noise_sigma_ > 0.0) {
    const double per_coord = noise_sigma_ / std::sqrt(static_cast<double>(dim()));
    g += per_coord * stream.standard_normal(dim());
  }
  return g;
}

LsrObjective::LsrObjective(const MatrixD& feature_covariance, VectorD theta_star, int batch_size)
    : covariance_(feature_covariance),
      theta_star_(std::move(theta_star)),
      batch_size_(batch_size),
      features_(VectorD::Zero(theta_star_.size()), feature_covariance) {
  if (batch_size_ < 1) throw std::invalid_argument("LsrObjective: batch_size must be >= 1");
}

double LsrObjective::value(const VectorD& theta) const {
  require_same_size(theta, theta_star_, "LsrObjective::value");
  const VectorD e = theta - theta_star_;
  return e.dot(covariance_ * e);
}

VectorD LsrObjective::gradient(const VectorD& theta) const {
  require_same_size(theta, theta_star_, "LsrObjective::gradient");
  return 2.0 * (covariance_ * (theta - theta_star_));
}

VectorD LsrObjective::stochastic_gradient(const VectorD& theta, RngStream& stream) const {
  require_same_size(theta, theta_star_, "LsrObjective::stochastic_gradient");
  const VectorD e = theta - theta_star_;
  VectorD g = VectorD::Zero(dim());
  for (int j = 0; j < batch_size_; ++j) {
    const VectorD x = features_.sample(stream);
    g += x.dot(e) * x;  // x (<x, theta> - y)
  }
  return (2.0 / batch_size_) * g;
}

Eigen::Index dim(const ClientObjective& obj) {
  return std::visit([](const auto& o) { return o.dim(); }, obj);
}

double value(const ClientObjective& obj, const VectorD& theta) {
  return std::visit([&](const auto& o) { return o.value(theta); }, obj);
}

double excess_loss(const ClientObjective& obj, const VectorD& theta) {
  return std::visit([&](const auto& o) { return o.value(theta) - o.minimum(); }, obj);
}

VectorD exact_gradient(const ClientObjective& obj, const VectorD& theta) {
  return std::visit([&](const auto& o) { return o.gradient(theta); }, obj);
}

VectorD stochastic_gradient(const ClientObjective& obj, const VectorD& theta, RngStream& stream) {
  return std::visit([&](const auto& o) { return o.stochastic_gradient(theta, stream); }, obj);
}

VectorD minimizer(const ClientObjective& obj) {
  return std::visit([](const auto& o) { return o.minimizer(); }, obj);
}

const MatrixD& curvature(const ClientObjective& obj) {
  if (const auto* q = std::get_if<QuadraticObjective>(&obj)) return q->curvature();
  return std::get<LsrObjective>(obj).feature_covariance();
}

namespace {

ObjectiveConstants curvature_constants(const MatrixD& m) {
  const VectorD eig = symmetric_eigenvalues(m);
  ObjectiveConstants k;
  k.beta = 2.0 * eig[eig.size() - 1];
  k.mu = std::max(0.0, 2.0 * eig[0]);
  return k;
}

}  // namespace

ObjectiveConstants constants(const QuadraticObjective& obj) {
  ObjectiveConstants k = curvature_constants(obj.curvature());
  k.sigma = obj.noise_sigma();
  return k;
}

ObjectiveConstants constants(const LsrObjective& obj, const VectorD& theta0, RngStream& stream) {
  ObjectiveConstants k = curvature_constants(obj.feature_covariance());
  const VectorD g0 = obj.gradient(theta0);
  std::vector<double> dev(kLsrSigmaProbes);
  for (auto& v : dev) v = (obj.stochastic_gradient(theta0, stream) - g0).norm();
  const auto rank = static_cast<std::size_t>(std::ceil(kLsrSigmaQuantile * dev.size())) - 1;
  std::nth_element(dev.begin(), dev.begin() + static_cast<std::ptrdiff_t>(rank), dev.end());
  k.sigma = dev[rank];
  return k;
}

ObjectiveConstants constants(const ClientObjective& obj, const std::optional<VectorD>& theta0,
                             RngStream* stream) {
  if (const auto* q = std::get_if<QuadraticObjective>(&obj)) return constants(*q);
  if (!theta0 || stream == nullptr) {
    throw std::invalid_argument("constants: LSR objectives need theta0 and a probe stream");
  }
  return constants(std::get<LsrObjective>(obj), *theta0, *stream);
}

HeterogeneityMatrix HeterogeneityMatrix::zeros(std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  return {MatrixD::Zero(m, m), MatrixD::Zero(m, m)};
}

HeterogeneityMatrix heterogeneity_bounds(std::span<const QuadraticObjective> objs,
                                         HeterogeneityScaling scaling) {
  const std::size_t n = objs.size();
  HeterogeneityMatrix hm = HeterogeneityMatrix::zeros(n);
  if (n == 0) return hm;
  const double hessian_factor = scaling == HeterogeneityScaling::hessian ? 2.0 : 1.0;
  const Eigen::Index d = objs[0].dim();

  std::vector<MatrixD> inverses;
  inverses.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (objs[i].dim() != d) throw std::invalid_argument("heterogeneity_bounds: dimension mismatch");
    Eigen::FullPivLU<MatrixD> lu(objs[i].curvature());
    if (!lu.isInvertible()) {
      throw std::invalid_argument("heterogeneity_bounds: curvature of client " + std::to_string(i) +
                                  " is singular");
    }
    inverses.push_back(lu.inverse());
  }
  const MatrixD identity = MatrixD::Identity(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (i == k) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const auto kk = static_cast<Eigen::Index>(k);
      const MatrixD& ak = objs[k].curvature();
      const VectorD dxi = objs[i].shift() - objs[k].shift();
      hm.b(ii, kk) = std::sqrt(2.0) * hessian_factor * (ak * dxi).norm();
      const double s = spectral_norm(identity - ak * inverses[i]);
      hm.c(ii, kk) = 2.0 * s * s;
    }
  }
  return hm;
}

HeterogeneityReport validate_heterogeneity(std::span<const ClientObjective> objs,
                                           const HeterogeneityMatrix& hm, int probes,
                                           RngStream& stream, double probe_scale) {
  if (probes < 1) throw std::invalid_argument("validate_heterogeneity: probes must be >= 1");
  if (hm.size() != objs.size()) {
    throw std::invalid_argument("validate_heterogeneity: matrix size does not match population");
  }
  HeterogeneityReport report;
  report.max_violation = -std::numeric_limits<double>::infinity();
  if (objs.empty()) return report;
  const Eigen::Index d = dim(objs[0]);
  const std::size_t n = objs.size();
  std::vector<VectorD> grads(n);
  for (int p = 0; p < probes; ++p) {
    const VectorD theta = probe_scale * stream.standard_normal(d);
    for (std::size_t i = 0; i < n; ++i) grads[i] = exact_gradient(objs[i], theta);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi2 = grads[i].squaredNorm();
      for (std::size_t k = 0; k < n; ++k) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto kk = static_cast<Eigen::Index>(k);
        const double lhs = (grads[i] - grads[k]).squaredNorm();
        const double rhs = hm.b(ii, kk) * hm.b(ii, kk) + hm.c(ii, kk) * gi2;
        const double gap = lhs - rhs;
        report.max_violation = std::max(report.max_violation, gap);
        if (gap > 1e-9 * std::max(1.0, rhs)) {
          ++report.violations;
          if (!report.first_violation) report.first_violation = HeterogeneityViolation{i, k, theta, gap};
        }
      }
    }
  }
  return report;
}

Population build_population(const PopulationSpec& spec, std::uint64_t seed) {
  if (spec.n_clients < 1 || spec.dim < 1 || spec.n_clusters < 1) {
    throw std::invalid_argument("build_population: n_clients, dim and n_clusters must be >= 1");
  }
  if (!(spec.spectrum_min > 0.0) || spec.spectrum_max < spec.spectrum_min) {
    throw std::invalid_argument("build_population: need 0 < spectrum_min <= spectrum_max");
  }
  Population pop;
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    RngStream s(seed, {c, StreamPurpose::setup, 1});
    pop.cluster_optima.push_back(spec.optimum_scale * s.standard_normal(spec.dim));
  }
  for (std::size_t i = 0; i < spec.n_clients; ++i) {
    const std::size_t cluster = i % spec.n_clusters;
    pop.cluster_of.push_back(cluster);
    RngStream s(seed, {i, StreamPurpose::setup, 2});
    const MatrixD p = sample_orthogonal_matrix(s, spec.dim);
    VectorD spectrum(spec.dim);
    for (Eigen::Index j = 0; j < spec.dim; ++j) {
      spectrum[j] = spec.spectrum_min + (spec.spectrum_max - spec.spectrum_min) * s.uniform();
    }
    MatrixD curv = p.transpose() * spectrum.asDiagonal() * p;
    curv = 0.5 * (curv + curv.transpose());
    const VectorD& opt = pop.cluster_optima[cluster];
    if (spec.kind == ObjectiveKind::quadratic) {
      pop.clients.emplace_back(QuadraticObjective(curv, -opt, spec.noise_sigma));
    } else {
      pop.clients.emplace_back(LsrObjective(curv, opt, spec.batch_size));
    }
  }
  return pop;
}

}  // namespace afo
