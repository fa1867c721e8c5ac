#include "afo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace afo {

StepSchedule::StepSchedule(Kind kind) : kind_(std::move(kind)) {
  if (const auto* c = std::get_if<ConstantStep>(&kind_)) {
    if (!(c->eta > 0.0)) throw std::invalid_argument("StepSchedule: constant eta must be > 0");
  } else if (const auto* h = std::get_if<HorizonStep>(&kind_)) {
    if (h->horizon < 1 || !(h->mu > 0.0) || !(h->beta > 0.0) || !(h->sigma_suf_sq > 0.0)) {
      throw std::invalid_argument("StepSchedule: horizon-dependent schedule needs T >= 1, mu, beta, sigma^2 > 0");
    }
    const double t = static_cast<double>(h->horizon);
    const double arg = 2.0 * t * h->mu * h->mu * h->eps0 / (h->beta * h->sigma_suf_sq);
    if (!(arg > 1.0)) {
      throw std::invalid_argument("StepSchedule: horizon-dependent log argument must exceed 1");
    }
    horizon_eta_ = std::log(arg) / (h->mu * t);
    if (horizon_eta_ > 1.0 / h->mu) {
      throw std::invalid_argument("StepSchedule: horizon-dependent eta exceeds 1/mu");
    }
  } else {
    const auto& d = std::get<DecreasingStep>(kind_);
    if (!(d.c > 1.0)) throw std::invalid_argument("StepSchedule: decreasing schedule needs C > 1");
    if (!(d.mu > 0.0)) throw std::invalid_argument("StepSchedule: decreasing schedule needs mu > 0");
  }
}

double StepSchedule::eta(std::int64_t t) const {
  if (const auto* c = std::get_if<ConstantStep>(&kind_)) return c->eta;
  if (std::holds_alternative<HorizonStep>(kind_)) return horizon_eta_;
  const auto& d = std::get<DecreasingStep>(kind_);
  return d.c / (d.mu * static_cast<double>(std::max<std::int64_t>(t, 1)));
}

std::string StepSchedule::describe() const {
  std::ostringstream os;
  os.precision(17);
  if (const auto* c = std::get_if<ConstantStep>(&kind_)) {
    os << "constant(eta=" << c->eta << ")";
  } else if (const auto* h = std::get_if<HorizonStep>(&kind_)) {
    os << "horizon_dependent(T=" << h->horizon << ",eta=" << horizon_eta_ << ")";
  } else {
    const auto& d = std::get<DecreasingStep>(kind_);
    os << "decreasing(C=" << d.c << ",mu=" << d.mu << ")";
  }
  return os.str();
}

StepResult afo_step(std::size_t focal, const VectorD& theta, const CollaborationState& weights,
                    std::span<const ClientObjective> oracles, double eta, RngStream& stream) {
  if (weights.alpha.size() != oracles.size()) {
    throw std::invalid_argument("afo_step: weight vector does not match the number of clients");
  }
  StepResult res;
  VectorD direction = VectorD::Zero(theta.size());
  if (weights.active_set.empty()) {
    direction = stochastic_gradient(oracles[focal], theta, stream);
    res.gradient_evaluations = 1;
    res.fallback = true;
  } else {
    for (std::size_t k : weights.active_set) {
      direction += weights.alpha[k] * stochastic_gradient(oracles[k], theta, stream);
      ++res.gradient_evaluations;
    }
  }
  res.params = theta - eta * direction;
  return res;
}

namespace {

CollaborationState solo_weights(std::size_t focal, std::size_t n, double sigma) {
  CollaborationState st;
  st.alpha.assign(n, 0.0);
  st.alpha[focal] = 1.0;
  st.active_set = {focal};
  st.sigma_eff_sq = sigma * sigma;
  st.sigma_phi_sq = sigma * sigma;
  return st;
}

}  // namespace

CollaborationState oracle_weights(std::size_t focal, std::span<const std::size_t> cluster_of,
                                  std::span<const double> sigmas) {
  const std::size_t n = cluster_of.size();
  if (focal >= n) throw std::out_of_range("oracle_weights: focal out of range");
  CollaborationState st;
  st.alpha.assign(n, 0.0);
  double inv = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (cluster_of[k] == cluster_of[focal]) {
      st.active_set.push_back(k);
      inv += sigmas.empty() ? 1.0 : 1.0 / (sigmas[k] * sigmas[k]);
    }
  }
  const double c = static_cast<double>(st.active_set.size());
  for (std::size_t k : st.active_set) st.alpha[k] = 1.0 / c;
  st.sigma_eff_sq = 1.0 / inv;
  st.sigma_phi_sq = st.sigma_eff_sq;
  return st;
}

StepResult oracle_afo_step(std::size_t focal, const VectorD& theta,
                           std::span<const std::size_t> cluster_of,
                           std::span<const ClientObjective> oracles, double eta, RngStream& stream) {
  if (cluster_of.size() != oracles.size()) {
    throw std::invalid_argument("oracle_afo_step: cluster labels do not match the number of clients");
  }
  return afo_step(focal, theta, oracle_weights(focal, cluster_of, {}), oracles, eta, stream);
}

VectorD fedavg_round(const VectorD& global, std::span<const ClientObjective> objectives, double eta,
                     int local_steps, std::span<RngStream> streams, long* gradient_evaluations) {
  if (local_steps < 1) throw std::invalid_argument("fedavg_round: local_steps must be >= 1");
  if (streams.size() != objectives.size()) {
    throw std::invalid_argument("fedavg_round: one stream per client is required");
  }
  VectorD sum = VectorD::Zero(global.size());
  for (std::size_t k = 0; k < objectives.size(); ++k) {
    VectorD local = global;
    for (int s = 0; s < local_steps; ++s) local -= eta * stochastic_gradient(objectives[k], local, streams[k]);
    sum += local;
  }
  if (gradient_evaluations) *gradient_evaluations += static_cast<long>(objectives.size()) * local_steps;
  return sum / static_cast<double>(objectives.size());
}

namespace {

struct ClusterWeights {
  double in = 0.0;
  double out = 0.0;
};

ClusterWeights cluster_weights(std::size_t focal, const std::vector<double>& alpha,
                               const std::vector<std::size_t>& cluster_of) {
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (k == focal) continue;
    if (cluster_of[k] == cluster_of[focal]) {
      in_sum += alpha[k];
      ++in_n;
    } else {
      out_sum += alpha[k];
      ++out_n;
    }
  }
  return {in_n ? in_sum / static_cast<double>(in_n) : 0.0, out_n ? out_sum / static_cast<double>(out_n) : 0.0};
}

bool diverged(double loss, double threshold) { return !std::isfinite(loss) || loss > threshold; }

}  // namespace

RunRecord run_experiment(const AlgorithmSpec& spec, std::span<const ClientObjective> objectives,
                         const StepSchedule& schedule, const RunOptions& opt) {
  const std::size_t n = objectives.size();
  if (n == 0) throw std::invalid_argument("run_experiment: no clients");
  if (opt.horizon < 1) throw std::invalid_argument("run_experiment: T must be >= 1");
  if (opt.log_every < 1) throw std::invalid_argument("run_experiment: log_every must be >= 1");
  const Eigen::Index d = dim(objectives[0]);
  for (const auto& o : objectives) {
    if (dim(o) != d) throw std::invalid_argument("run_experiment: clients differ in dimension");
  }

  std::vector<double> sigmas = opt.sigmas.empty() ? std::vector<double>(n, 1.0) : opt.sigmas;
  std::vector<double> betas = opt.betas;
  if (betas.empty()) {
    for (const auto& o : objectives) betas.push_back(2.0 * symmetric_eigenvalues(curvature(o)).maxCoeff());
  }
  std::vector<std::size_t> cluster_of = opt.cluster_of.empty() ? std::vector<std::size_t>(n, 0) : opt.cluster_of;
  if (sigmas.size() != n || betas.size() != n || cluster_of.size() != n) {
    throw std::invalid_argument("run_experiment: per-client sigmas, betas and cluster labels must have N entries");
  }
  if (const auto* oracle = std::get_if<OracleAlgo>(&spec.kind); oracle && oracle->cluster_of.size() != n) {
    throw std::invalid_argument("run_experiment: oracle clusters must label every client");
  }

  std::vector<VectorD> thetas = opt.init;
  if (thetas.empty()) thetas.assign(n, VectorD::Zero(d));
  if (thetas.size() != n) throw std::invalid_argument("run_experiment: init must have N entries");

  std::vector<RngStream> step_streams, est_streams;
  for (std::size_t i = 0; i < n; ++i) {
    step_streams.emplace_back(opt.seed, StreamId{i, StreamPurpose::step, 0});
    est_streams.emplace_back(opt.seed, StreamId{i, StreamPurpose::estimate, 0});
  }

  RunRecord rec;
  rec.meta.seed = opt.seed;
  rec.meta.algorithm = spec.name;
  rec.meta.schedule = schedule.describe();
  std::vector<std::int64_t> evals(n, 0);

  auto log_rows = [&](std::int64_t t, const std::vector<VectorD>& params,
                      const std::vector<CollaborationState>& weights) {
    for (std::size_t i = 0; i < n; ++i) {
      MetricRow row;
      row.iter = t;
      row.client = i;
      row.excess_loss = excess_loss(objectives[i], params[i]);
      row.test_loss = value(objectives[i], params[i]);
      row.grad_sq_norm = exact_gradient(objectives[i], params[i]).squaredNorm();
      row.active_set_size = weights[i].active_set.size();
      row.weight_mass = weights[i].weight_mass();
      row.sigma_eff_sq = weights[i].sigma_eff_sq;
      const auto cw = cluster_weights(i, weights[i].alpha, cluster_of);
      row.in_cluster_weight = cw.in;
      row.out_cluster_weight = cw.out;
      row.grad_evals_total = evals[i];
      rec.rows.push_back(row);
    }
  };

  auto check_divergence = [&](std::int64_t t, const std::vector<VectorD>& params) {
    for (std::size_t i = 0; i < n; ++i) {
      const double loss = excess_loss(objectives[i], params[i]);
      if (diverged(loss, opt.divergence_threshold)) {
        rec.divergence = Divergence{t, i, loss};
        return true;
      }
    }
    return false;
  };

  if (const auto* fed = std::get_if<FedAvgAlgo>(&spec.kind)) {
    VectorD global = thetas[0];
    double inv = 0.0;
    for (double s : sigmas) inv += 1.0 / (s * s);
    CollaborationState uniform;
    uniform.alpha.assign(n, 1.0 / static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k) uniform.active_set.push_back(k);
    uniform.sigma_eff_sq = uniform.sigma_phi_sq = 1.0 / inv;
    const std::vector<CollaborationState> weights(n, uniform);
    const double cap = 1.0 / *std::max_element(betas.begin(), betas.end());

    for (std::int64_t t = 1; t <= opt.horizon; ++t) {
      const double sched = schedule.eta(t);
      const double eta = std::min(sched, cap);
      if (eta < sched) ++rec.meta.capped_steps;
      rec.meta.max_eta_times_cap_ratio = std::max(rec.meta.max_eta_times_cap_ratio, eta / cap);
      global = fedavg_round(global, objectives, eta, fed->local_steps, step_streams);
      for (auto& e : evals) e += fed->local_steps;
      const std::vector<VectorD> params(n, global);
      if (check_divergence(t, params)) break;
      if (t % opt.log_every == 0) log_rows(t, params, weights);
    }
    rec.final_params.assign(n, global);
  } else {
    std::vector<std::optional<CollaborationState>> cached(n);
    std::vector<CollaborationState> used(n);
    std::vector<VectorD> next(n);

    for (std::int64_t t = 1; t <= opt.horizon; ++t) {
      const double sched = schedule.eta(t);
      for (std::size_t i = 0; i < n; ++i) {
        if (const auto* afo = std::get_if<AllForOneAlgo>(&spec.kind)) {
          const int every = std::max(1, afo->reestimate_every);
          if (!cached[i] || (t - 1) % every == 0) {
            std::vector<double> ratios;
            if (afo->b_alpha) {
              auto est = estimate_ratios(i, thetas[i], objectives, *afo->b_alpha, est_streams[i]);
              evals[i] += est.gradient_evaluations;
              if (est.degenerate) ++rec.meta.degenerate_estimates;
              ratios = std::move(est.ratios);
            } else {
              ratios = exact_ratios(i, thetas[i], objectives);
            }
            auto st = try_compute_weights(ratios, sigmas, afo->criterion);
            if (!st) {
              ++rec.meta.fallback_steps;
              st = solo_weights(i, n, sigmas[i]);
            }
            cached[i] = std::move(st);
          }
          used[i] = *cached[i];
        } else if (const auto* oracle = std::get_if<OracleAlgo>(&spec.kind)) {
          if (!cached[i]) cached[i] = oracle_weights(i, oracle->cluster_of, sigmas);
          used[i] = *cached[i];
        } else {
          if (!cached[i]) cached[i] = solo_weights(i, n, sigmas[i]);
          used[i] = *cached[i];
        }

        const double mass = used[i].weight_mass();
        const double cap = 1.0 / (betas[i] * mass);
        const double eta = std::min(sched, cap);
        if (eta < sched) ++rec.meta.capped_steps;
        rec.meta.max_eta_times_cap_ratio = std::max(rec.meta.max_eta_times_cap_ratio, eta / cap);

        if (opt.observer) {
          StepEvent ev;
          ev.iteration = t;
          ev.client = i;
          ev.theta_prev = &thetas[i];
          ev.excess_prev = excess_loss(objectives[i], thetas[i]);
          ev.weights = &used[i];
          ev.eta = eta;
          opt.observer(ev);
        }

        auto step = afo_step(i, thetas[i], used[i], objectives, eta, step_streams[i]);
        evals[i] += step.gradient_evaluations;
        if (step.fallback) ++rec.meta.fallback_steps;
        next[i] = std::move(step.params);
      }
      std::swap(thetas, next);
      if (check_divergence(t, thetas)) break;
      if (t % opt.log_every == 0) log_rows(t, thetas, used);
    }
    rec.final_params = thetas;
  }
  for (auto e : evals) rec.meta.grad_evals_total += e;
  return rec;
}

}  // namespace afo
