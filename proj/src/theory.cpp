#include "afo/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace afo {

double sufficient_ratio(double b, double c, double mu, double eps, ThresholdExponent exponent) {
  const double bp = exponent == ThresholdExponent::two ? b * b : b;
  if (bp == 0.0) return std::max(0.0, 1.0 - c);
  return std::max(0.0, 1.0 - bp / (2.0 * mu * eps) - c);
}

SufficientClusterReport sufficient_cluster(std::size_t focal, double eps, const HeterogeneityMatrix& hm,
                                           double mu, std::span<const double> sigmas,
                                           const Criterion& crit, ThresholdExponent exponent) {
  if (!(eps > 0.0)) throw std::invalid_argument("sufficient_cluster: eps must be > 0");
  if (!(mu > 0.0)) throw std::invalid_argument("sufficient_cluster: mu must be > 0");
  if (sigmas.size() != hm.size()) throw std::invalid_argument("sufficient_cluster: size mismatch");
  if (focal >= hm.size()) throw std::out_of_range("sufficient_cluster: focal out of range");

  SufficientClusterReport rep;
  rep.focal = focal;
  rep.epsilon = eps;
  const auto i = static_cast<Eigen::Index>(focal);
  double inv = 0.0;
  for (std::size_t k = 0; k < hm.size(); ++k) {
    if (!(sigmas[k] > 0.0)) throw std::invalid_argument("sufficient_cluster: sigmas must be > 0");
    const auto kk = static_cast<Eigen::Index>(k);
    const double p = crit.psi(sufficient_ratio(hm.b(i, kk), hm.c(i, kk), mu, eps, exponent));
    if (p > 0.0) {
      rep.members.push_back(k);
      inv += p / (sigmas[k] * sigmas[k]);
    }
  }
  rep.sigma_suf_sq = inv > 0.0 ? 1.0 / inv : std::numeric_limits<double>::infinity();
  return rep;
}

double sigma_suf_sq_limit_large_eps(std::size_t focal, const HeterogeneityMatrix& hm,
                                    std::span<const double> sigmas, const Criterion& crit) {
  const auto i = static_cast<Eigen::Index>(focal);
  double inv = 0.0;
  for (std::size_t k = 0; k < hm.size(); ++k) {
    const double c = hm.c(i, static_cast<Eigen::Index>(k));
    inv += crit.psi(std::max(0.0, 1.0 - c)) / (sigmas[k] * sigmas[k]);
  }
  return inv > 0.0 ? 1.0 / inv : std::numeric_limits<double>::infinity();
}

std::string to_string(StepRegime regime) {
  switch (regime) {
    case StepRegime::constant: return "constant";
    case StepRegime::horizon_dependent: return "horizon_dependent";
    case StepRegime::decreasing: return "decreasing";
  }
  return "unknown";
}

std::optional<StepRegime> parse_regime(const std::string& s) {
  if (s == "constant") return StepRegime::constant;
  if (s == "horizon_dependent" || s == "horizon") return StepRegime::horizon_dependent;
  if (s == "decreasing") return StepRegime::decreasing;
  return std::nullopt;
}

namespace {

void require(bool ok, const std::string& constraint) {
  if (!ok) throw std::invalid_argument("table1_bound: violated constraint: " + constraint);
}

}  // namespace

double horizon_step_size(double beta, double mu, double eps0, double sigma_suf_sq, std::int64_t horizon) {
  const double t = static_cast<double>(horizon);
  return std::log(2.0 * t * mu * mu * eps0 / (beta * sigma_suf_sq)) / (mu * t);
}

BoundEvaluation table1_bound(StepRegime regime, const BoundInputs& in) {
  require(in.beta > 0.0, "beta > 0");
  require(in.mu > 0.0, "mu > 0");
  require(in.mu <= in.beta, "mu <= beta");
  require(in.eps0 >= 0.0, "eps0 >= 0");
  require(in.sigma_suf_sq >= 0.0, "sigma_suf_sq >= 0");
  require(in.horizon >= 0, "T >= 0");

  BoundEvaluation ev;
  ev.regime = regime;
  ev.inputs = in;
  const double t = static_cast<double>(in.horizon);
  const double plateau_scale = in.beta * in.sigma_suf_sq / (2.0 * in.mu);

  switch (regime) {
    case StepRegime::constant: {
      const double eta = in.eta_or_c;
      require(eta > 0.0, "eta > 0");
      require(eta <= 1.0 / in.mu, "eta <= 1/mu");
      ev.step_size = eta;
      ev.bound = std::pow(1.0 - eta * in.mu, t) * in.eps0 + eta * plateau_scale;
      break;
    }
    case StepRegime::horizon_dependent: {
      require(in.horizon >= 1, "T >= 1");
      require(in.sigma_suf_sq > 0.0, "sigma_suf_sq > 0");
      const double step_arg = 2.0 * t * in.mu * in.mu * in.eps0 / (in.beta * in.sigma_suf_sq);
      require(step_arg > 1.0, "2 T mu^2 eps0 / (beta sigma_suf^2) > 1");
      const double eta = std::log(step_arg) / (in.mu * t);
      require(eta <= 1.0 / in.mu, "horizon-dependent eta <= 1/mu");
      const double bound_arg = 2.0 * t * in.mu * in.mu * in.eps0 / in.sigma_suf_sq;
      ev.step_size = eta;
      ev.bound = in.beta * in.sigma_suf_sq / (2.0 * in.mu * in.mu * t) * (std::log(bound_arg) + 1.0);
      break;
    }
    case StepRegime::decreasing: {
      const double c = in.eta_or_c;
      require(c > 1.0, "C > 1");
      require(in.horizon >= 1, "T >= 1");
      const double variance_term = in.beta * in.sigma_suf_sq * c * c / (2.0 * in.mu * in.mu * (c - 1.0));
      ev.step_size = c / (in.mu * t);
      ev.bound = std::max(variance_term, in.eps0) / t;
      break;
    }
  }
  return ev;
}

std::int64_t sample_complexity(double eps, double beta, double mu, double sigma_suf_sq, double c) {
  if (!(eps > 0.0)) throw std::invalid_argument("sample_complexity: eps must be > 0");
  if (!(c > 1.0)) throw std::invalid_argument("sample_complexity: C must be > 1");
  if (!(mu > 0.0)) throw std::invalid_argument("sample_complexity: mu must be > 0");
  const double cc = c * c / (c - 1.0);
  return static_cast<std::int64_t>(std::ceil(beta * sigma_suf_sq * cc / (2.0 * mu * mu * eps)));
}

DescentBound descent_bound_rhs(double eta, std::span<const double> alpha, std::size_t focal,
                               std::span<const VectorD> grads_prev, double grad_sq_new,
                               std::span<const double> sigmas, double beta) {
  if (alpha.size() != grads_prev.size() || alpha.size() != sigmas.size()) {
    throw std::invalid_argument("descent_bound_rhs: alpha, gradients and sigmas differ in length");
  }
  if (focal >= alpha.size()) throw std::out_of_range("descent_bound_rhs: focal out of range");
  double mass = 0.0;
  for (double a : alpha) {
    if (a < 0.0) throw std::invalid_argument("descent_bound_rhs: weights must be >= 0");
    mass += a;
  }
  if (!(eta > 0.0) || !(eta * beta * mass < 1.0)) {
    throw std::invalid_argument("descent_bound_rhs: step condition eta < 1/(beta sum alpha) violated");
  }
  const VectorD& gi = grads_prev[focal];
  const double gi_prev = gi.squaredNorm();
  double bias_prev = 0.0;
  double bias_new = 0.0;
  double variance = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    const double diff = (grads_prev[k] - gi).squaredNorm();
    bias_prev += alpha[k] * (diff - gi_prev);
    bias_new += alpha[k] * (diff - grad_sq_new);
    variance += sigmas[k] * sigmas[k] * alpha[k] * alpha[k];
  }
  return {0.5 * eta * bias_prev + eta * beta * variance, 0.5 * eta * bias_new + eta * beta * variance};
}

NestingResult nesting_check(std::size_t focal, std::span<const double> eps_grid,
                            const HeterogeneityMatrix& hm, double mu, std::span<const double> sigmas,
                            const Criterion& crit, ThresholdExponent exponent) {
  NestingResult res;
  std::optional<SufficientClusterReport> prev;
  for (std::size_t g = 0; g < eps_grid.size(); ++g) {
    if (!(eps_grid[g] > 0.0)) throw std::invalid_argument("nesting_check: eps grid must be positive");
    if (g > 0 && !(eps_grid[g] < eps_grid[g - 1])) {
      throw std::invalid_argument("nesting_check: eps grid must be strictly decreasing");
    }
    auto cur = sufficient_cluster(focal, eps_grid[g], hm, mu, sigmas, crit, exponent);
    if (prev) {
      if (!std::includes(prev->members.begin(), prev->members.end(), cur.members.begin(),
                         cur.members.end())) {
        std::ostringstream os;
        os << "cluster at eps=" << cur.epsilon << " is not contained in cluster at eps=" << prev->epsilon;
        return {false, os.str()};
      }
      if (cur.sigma_suf_sq < prev->sigma_suf_sq) {
        std::ostringstream os;
        os << "sigma_suf^2 decreased from " << prev->sigma_suf_sq << " to " << cur.sigma_suf_sq
           << " at eps=" << cur.epsilon;
        return {false, os.str()};
      }
    }
    prev = std::move(cur);
  }
  return res;
}

NestingResult nesting_runtime_check(std::size_t focal, std::span<const NestingSample> trajectory,
                                    const HeterogeneityMatrix& hm, double mu,
                                    std::span<const double> sigmas, const Criterion& crit,
                                    ThresholdExponent exponent) {
  for (const auto& s : trajectory) {
    if (!(s.excess > 0.0)) continue;
    const auto rep = sufficient_cluster(focal, s.excess, hm, mu, sigmas, crit, exponent);
    std::vector<std::size_t> active = s.active_set;
    std::sort(active.begin(), active.end());
    for (std::size_t k : rep.members) {
      if (!std::binary_search(active.begin(), active.end(), k)) {
        std::ostringstream os;
        os << "iteration " << s.iteration << ": client " << k << " is in the sufficient cluster at eps="
           << s.excess << " but not in the active set";
        return {false, os.str()};
      }
    }
  }
  return {};
}

double nonconvex_rate_bound(double eps0, double beta, double sigma_suf_sq, std::int64_t horizon) {
  if (horizon < 1) throw std::invalid_argument("nonconvex_rate_bound: T must be >= 1");
  return 2.0 * std::sqrt(2.0 * eps0 * beta * sigma_suf_sq / static_cast<double>(horizon));
}

}  // namespace afo
