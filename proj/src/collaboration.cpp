#include "afo/collaboration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace afo {

Criterion Criterion::binary(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("Criterion::binary: lambda must lie in (0, 1]");
  }
  return {Kind::binary, lambda};
}

Criterion Criterion::continuous() { return {Kind::continuous, 0.0}; }

std::string Criterion::name() const { return kind_ == Kind::binary ? "binary" : "continuous"; }

double Criterion::phi(double x) const {
  if (kind_ == Kind::continuous) return x;
  return x >= lambda_ ? lambda_ : 0.0;
}

double similarity_ratio(const VectorD& grad_i, const VectorD& grad_k) {
  require_same_size(grad_i, grad_k, "similarity_ratio");
  const double gi2 = grad_i.squaredNorm();
  if (gi2 == 0.0) return grad_k.squaredNorm() == 0.0 ? 1.0 : 0.0;
  const double r = 1.0 - (grad_k - grad_i).squaredNorm() / gi2;
  return std::clamp(r, 0.0, 1.0);
}

std::vector<double> exact_ratios(std::size_t focal, const VectorD& params,
                                 std::span<const ClientObjective> objectives) {
  const VectorD gi = exact_gradient(objectives[focal], params);
  std::vector<double> r(objectives.size());
  for (std::size_t k = 0; k < objectives.size(); ++k) {
    if (k == focal) {
      r[k] = 1.0;
      continue;
    }
    const double rk = similarity_ratio(gi, exact_gradient(objectives[k], params));
    // zero-gradient convention: at its own optimum the focal client works alone
    r[k] = gi.squaredNorm() == 0.0 ? 0.0 : rk;
  }
  return r;
}

double CollaborationState::weight_mass() const {
  return std::accumulate(alpha.begin(), alpha.end(), 0.0);
}

std::optional<CollaborationState> try_compute_weights(std::span<const double> ratios,
                                                      std::span<const double> sigmas,
                                                      const Criterion& crit) {
  if (ratios.size() != sigmas.size()) {
    throw std::invalid_argument("compute_weights: ratios and sigmas differ in length");
  }
  double inv_psi = 0.0;
  double inv_phi = 0.0;
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    if (!(sigmas[k] > 0.0) || !std::isfinite(sigmas[k])) {
      throw std::invalid_argument("compute_weights: sigmas must be finite and > 0");
    }
    if (!(ratios[k] >= 0.0 && ratios[k] <= 1.0)) {
      throw std::invalid_argument("compute_weights: ratios must lie in [0, 1]");
    }
    const double w = 1.0 / (sigmas[k] * sigmas[k]);
    inv_psi += w * crit.psi(ratios[k]);
    inv_phi += w * crit.phi(ratios[k]);
  }
  if (!(inv_psi > 0.0)) return std::nullopt;

  CollaborationState st;
  st.sigma_eff_sq = 1.0 / inv_psi;
  st.sigma_phi_sq = 1.0 / inv_phi;
  st.alpha.resize(ratios.size());
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    st.alpha[k] = crit.phi(ratios[k]) * st.sigma_eff_sq / (sigmas[k] * sigmas[k]);
    if (st.alpha[k] > 0.0) st.active_set.push_back(k);
  }
  return st;
}

CollaborationState compute_weights(std::span<const double> ratios, std::span<const double> sigmas,
                                   const Criterion& crit) {
  auto st = try_compute_weights(ratios, sigmas, crit);
  if (!st) throw NoAdmissibleCollaborator();
  return std::move(*st);
}

RatioEstimate estimate_ratios(std::size_t focal, const VectorD& params,
                              std::span<const ClientObjective> oracles, int b_alpha,
                              RngStream& stream) {
  if (b_alpha < 1) throw std::invalid_argument("estimate_ratios: b_alpha must be >= 1");
  if (focal >= oracles.size()) throw std::out_of_range("estimate_ratios: focal index out of range");
  const std::size_t n = oracles.size();
  const Eigen::Index d = params.size();
  RatioEstimate est;
  est.ratios.assign(n, 0.0);

  std::vector<VectorD> own(static_cast<std::size_t>(b_alpha));
  // Running means: identical draws (zero noise) give the exact gradient back.
  VectorD own_mean = VectorD::Zero(d);
  for (std::size_t j = 0; j < own.size(); ++j) {
    own[j] = stochastic_gradient(oracles[focal], params, stream);
    own_mean += (own[j] - own_mean) / static_cast<double>(j + 1);
  }
  est.gradient_evaluations += b_alpha;
  const double z_i = own_mean.squaredNorm();

  if (z_i == 0.0) {
    est.degenerate = true;
    est.ratios[focal] = 1.0;
    return est;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (k == focal) {
      est.ratios[k] = 1.0;
      continue;
    }
    VectorD diff_mean = VectorD::Zero(d);
    for (std::size_t j = 0; j < own.size(); ++j) {
      const VectorD diff = own[j] - stochastic_gradient(oracles[k], params, stream);
      diff_mean += (diff - diff_mean) / static_cast<double>(j + 1);
    }
    est.gradient_evaluations += b_alpha;
    est.ratios[k] = std::clamp(1.0 - diff_mean.squaredNorm() / z_i, 0.0, 1.0);
  }
  return est;
}

RatioBounds step_size_ratio_bounds(std::size_t focal, const Criterion& crit,
                                   std::span<const double> sigmas) {
  if (crit.kind() == Criterion::Kind::binary) return {crit.lambda(), 1.0};
  if (focal >= sigmas.size()) throw std::out_of_range("step_size_ratio_bounds: focal out of range");
  double total = 0.0;
  for (double s : sigmas) total += 1.0 / (s * s);
  const double si = sigmas[focal];
  return {1.0 / (si * si * total), 1.0};
}

}  // namespace afo
