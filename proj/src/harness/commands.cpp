#include "afo/harness/commands.hpp"

#include "afo/harness/io.hpp"
#include "afo/theory.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace afo::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct EmittedFile {
  std::string name;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

EmittedFile emit(const fs::path& dir, const std::string& name, const std::string& content) {
  write_file_atomic(dir / name, content);
  return {name, sha256_hex(content), content.size()};
}

void write_manifest(const fs::path& dir, ordered_json manifest, const std::vector<EmittedFile>& files) {
  ordered_json list = ordered_json::array();
  for (const auto& f : files) list.push_back({{"path", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  manifest["files"] = std::move(list);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

ordered_json json_number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

void report_config_errors(const std::vector<FieldError>& errors, std::ostream& err) {
  for (const auto& e : errors) err << "config error: " << e.field << ": " << e.message << "\n";
}

}  // namespace

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

PreparedPopulation prepare_population(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& o = cfg.objective;
  PopulationSpec spec;
  spec.kind = o.kind;
  spec.n_clients = static_cast<std::size_t>(o.n_clients);
  spec.dim = static_cast<Eigen::Index>(o.dim);
  spec.n_clusters = static_cast<std::size_t>(o.n_clusters);
  spec.batch_size = static_cast<int>(o.batch_size);
  spec.noise_sigma = o.noise_sigma;
  spec.spectrum_min = o.spectrum_min;
  spec.spectrum_max = o.spectrum_max;
  spec.optimum_scale = o.optimum_scale;

  PreparedPopulation p;
  p.population = build_population(spec, seed);
  const std::size_t n = p.population.clients.size();
  const VectorD theta0 = VectorD::Zero(spec.dim);
  p.sigmas.resize(n);
  p.betas.resize(n);
  p.mu_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    RngStream probe(seed, {i, StreamPurpose::probe, 0});
    const auto k = constants(p.population.clients[i], theta0, &probe);
    p.betas[i] = k.beta;
    p.sigmas[i] = k.sigma;
    p.beta_max = std::max(p.beta_max, k.beta);
    p.mu_min = std::min(p.mu_min, k.mu);
    if (o.kind == ObjectiveKind::lsr) p.estimated_sigmas.push_back(k.sigma);
  }
  if (std::any_of(p.sigmas.begin(), p.sigmas.end(), [](double s) { return !(s > 0.0); })) {
    std::fill(p.sigmas.begin(), p.sigmas.end(), 1.0);
    p.sigma_fallback = true;
  }
  return p;
}

AlgorithmSpec make_algorithm(const ExperimentConfig& cfg, const AlgorithmEntry& entry,
                             const PreparedPopulation& pop) {
  AlgorithmSpec spec;
  spec.name = entry.name;
  switch (entry.kind) {
    case AlgoKind::all_for_one: {
      const CriterionSection& c = entry.criterion ? *entry.criterion : cfg.criterion;
      AllForOneAlgo a;
      a.criterion = c.kind == Criterion::Kind::binary ? Criterion::binary(c.lambda) : Criterion::continuous();
      if (!entry.exact_ratios) a.b_alpha = static_cast<int>(entry.b_alpha.value_or(cfg.objective.b_alpha));
      a.reestimate_every = static_cast<int>(entry.reestimate_every);
      spec.kind = a;
      break;
    }
    case AlgoKind::oracle: spec.kind = OracleAlgo{pop.population.cluster_of}; break;
    case AlgoKind::local: spec.kind = LocalAlgo{}; break;
    case AlgoKind::fedavg: spec.kind = FedAvgAlgo{static_cast<int>(entry.local_steps)}; break;
  }
  return spec;
}

StepSchedule make_schedule(const ExperimentConfig& cfg, const PreparedPopulation& pop) {
  const auto& s = cfg.schedule;
  switch (s.kind) {
    case ScheduleKind::constant:
      return StepSchedule(ConstantStep{s.eta.value_or(s.eta_fraction / pop.beta_max)});
    case ScheduleKind::horizon_dependent: {
      HorizonStep h;
      h.horizon = cfg.experiment.horizon;
      h.mu = pop.mu_min;
      h.beta = pop.beta_max;
      if (s.eps0) {
        h.eps0 = *s.eps0;
      } else {
        const VectorD theta0 = VectorD::Zero(cfg.objective.dim);
        for (const auto& c : pop.population.clients) h.eps0 = std::max(h.eps0, excess_loss(c, theta0));
      }
      h.sigma_suf_sq = s.sigma_suf_sq.value_or(
          *std::max_element(pop.sigmas.begin(), pop.sigmas.end()) *
          *std::max_element(pop.sigmas.begin(), pop.sigmas.end()));
      return StepSchedule(h);
    }
    case ScheduleKind::decreasing: return StepSchedule(DecreasingStep{s.c, pop.mu_min});
  }
  throw std::logic_error("make_schedule: unknown schedule kind");
}

RunOutput execute_run(const ExperimentConfig& cfg, const AlgorithmEntry& entry, std::uint64_t seed) {
  RunOutput out;
  out.algo = entry.name;
  out.seed = seed;
  out.run_id = run_id(entry.name, seed);
  out.prepared = prepare_population(cfg, seed);
  const auto& pop = out.prepared;

  RunOptions opt;
  opt.horizon = cfg.experiment.horizon;
  opt.log_every = cfg.experiment.log_every;
  opt.seed = seed;
  opt.sigmas = pop.sigmas;
  opt.betas = pop.betas;
  opt.cluster_of = pop.population.cluster_of;
  opt.divergence_threshold = cfg.experiment.divergence_threshold;

  out.record = run_experiment(make_algorithm(cfg, entry, pop), pop.population.clients, make_schedule(cfg, pop),
                              opt);
  out.csv = metrics_csv(out.run_id, config_hash(cfg), entry.name, seed, out.record.rows);
  return out;
}

int cli_run(const ExperimentConfig& cfg, const fs::path& out_dir, int jobs, std::ostream& log, std::ostream& err) {
  if (auto errors = validate_for_run(cfg); !errors.empty()) {
    report_config_errors(errors, err);
    return kExitConfigError;
  }
  struct Task {
    const AlgorithmEntry* entry;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& a : cfg.algorithms) {
    for (auto s : cfg.experiment.seeds) tasks.push_back({&a, s});
  }

  // Schedules are checked up front so a bad horizon-dependent setup is a
  // configuration error and nothing gets written.
  try {
    make_schedule(cfg, prepare_population(cfg, cfg.experiment.seeds.front()));
  } catch (const std::invalid_argument& e) {
    err << "config error: schedule: " << e.what() << "\n";
    return kExitConfigError;
  }

  fs::create_directories(out_dir);
  const std::string hash = config_hash(cfg);

  std::vector<std::optional<RunOutput>> results(tasks.size());
  std::vector<std::exception_ptr> failures(tasks.size());
  std::vector<EmittedFile> csv_files(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        auto r = execute_run(cfg, *tasks[i].entry, tasks[i].seed);
        csv_files[i] = emit(out_dir, r.run_id + ".csv", r.csv);
        r.csv.clear();
        {
          std::lock_guard lock(log_mutex);
          log << "finished " << r.run_id << " (" << r.record.rows.size() << " rows)\n";
        }
        results[i] = std::move(r);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, tasks.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      err << "run " << run_id(tasks[i].entry->name, tasks[i].seed) << " failed: " << e.what() << "\n";
    }
    return kExitFailure;
  }

  std::vector<EmittedFile> files;
  files.push_back(emit(out_dir, "config.toml", to_toml(cfg)));
  ordered_json runs = ordered_json::array();
  std::vector<std::string> divergence_paths;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& r = *results[i];
    files.push_back(csv_files[i]);
    const auto& m = r.record.meta;
    ordered_json run{{"run_id", r.run_id},
                     {"algo", r.algo},
                     {"kind", to_string(tasks[i].entry->kind)},
                     {"seed", r.seed},
                     {"file", csv_files[i].name},
                     {"rows", r.record.rows.size()},
                     {"schedule", m.schedule},
                     {"capped_steps", m.capped_steps},
                     {"fallback_steps", m.fallback_steps},
                     {"degenerate_estimates", m.degenerate_estimates},
                     {"grad_evals_total", m.grad_evals_total},
                     {"max_eta_times_cap_ratio", json_number(m.max_eta_times_cap_ratio)},
                     {"sigma_fallback", r.prepared.sigma_fallback}};
    if (!r.prepared.estimated_sigmas.empty()) run["estimated_sigmas"] = r.prepared.estimated_sigmas;
    run["status"] = r.record.divergence ? "diverged" : "ok";
    if (r.record.divergence) {
      const auto& d = *r.record.divergence;
      ordered_json diag{{"run_id", r.run_id},     {"config_hash", hash},   {"algo", r.algo},
                        {"seed", r.seed},         {"iteration", d.iteration}, {"client", d.client},
                        {"loss", json_number(d.loss)}, {"threshold", cfg.experiment.divergence_threshold}};
      const std::string name = "divergence_" + r.run_id + ".json";
      files.push_back(emit(out_dir, name, diag.dump(2) + "\n"));
      run["divergence_record"] = name;
      divergence_paths.push_back((out_dir / name).string());
    }
    runs.push_back(std::move(run));
  }

  ordered_json manifest{{"kind", "run"},
                        {"experiment", cfg.experiment.name},
                        {"config_hash", hash},
                        {"config_file", "config.toml"},
                        {"csv_header", std::string(kCsvHeader)},
                        {"runs", std::move(runs)}};
  write_manifest(out_dir, std::move(manifest), files);
  log << "wrote " << tasks.size() << " runs and " << (out_dir / "manifest.json").string() << "\n";

  if (!divergence_paths.empty()) {
    for (const auto& p : divergence_paths) err << "divergence: diagnostic record " << p << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

std::vector<SufficientClusterRow> sufficient_cluster_curves(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& sc = cfg.sufficient_cluster.value();
  const auto n = static_cast<std::size_t>(sc.n_clients);
  const auto d = static_cast<Eigen::Index>(sc.dim);

  // The same base draws are rescaled for every v so the curves are comparable.
  RngStream center_stream(seed, {0, StreamPurpose::setup, 1});
  const VectorD center = center_stream.standard_normal(d);
  std::vector<VectorD> offsets;
  for (std::size_t k = 0; k < n; ++k) {
    RngStream s(seed, {k, StreamPurpose::setup, 3});
    offsets.push_back(s.standard_normal(d));
  }

  const Criterion crit =
      cfg.criterion.kind == Criterion::Kind::binary ? Criterion::binary(cfg.criterion.lambda) : Criterion::continuous();
  const std::vector<double> sigmas(n, sc.sigma);
  const auto grid = log_grid(sc.eps_min, sc.eps_max, static_cast<std::size_t>(sc.eps_points));
  const MatrixD identity = MatrixD::Identity(d, d);

  std::vector<SufficientClusterRow> rows;
  for (double v : sc.v) {
    std::vector<QuadraticObjective> objs;
    for (std::size_t k = 0; k < n; ++k) objs.emplace_back(identity, -(center + v * offsets[k]), 0.0);
    const auto hm = heterogeneity_bounds(objs, sc.scaling);
    const double mu = constants(objs.front()).mu;
    for (double eps : grid) {
      const auto rep = sufficient_cluster(static_cast<std::size_t>(sc.focal), eps, hm, mu, sigmas, crit,
                                          cfg.experiment.threshold_exponent);
      rows.push_back({v, eps, rep.size(), rep.sigma_suf_sq});
    }
  }
  return rows;
}

int cli_sufficient_cluster(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log,
                           std::ostream& err) {
  if (!cfg.sufficient_cluster) {
    report_config_errors({{"sufficient_cluster", "missing [sufficient_cluster] table"}}, err);
    return kExitConfigError;
  }
  const auto seed = cfg.experiment.seeds.front();
  const auto rows = sufficient_cluster_curves(cfg, seed);
  std::string csv = "v,epsilon,cluster_size,sigma_suf_sq\n";
  for (const auto& r : rows) {
    csv += format_double(r.v) + "," + format_double(r.epsilon) + "," + std::to_string(r.cluster_size) + "," +
           format_double(r.sigma_suf_sq) + "\n";
  }
  fs::create_directories(out_dir);
  std::vector<EmittedFile> files;
  files.push_back(emit(out_dir, "config.toml", to_toml(cfg)));
  files.push_back(emit(out_dir, "sufficient_cluster.csv", csv));
  ordered_json manifest{{"kind", "sufficient_cluster"},
                        {"experiment", cfg.experiment.name},
                        {"config_hash", config_hash(cfg)},
                        {"config_file", "config.toml"},
                        {"seed", seed},
                        {"focal", cfg.sufficient_cluster->focal},
                        {"criterion", cfg.criterion.kind == Criterion::Kind::binary ? "binary" : "continuous"},
                        {"lambda", cfg.criterion.lambda}};
  write_manifest(out_dir, std::move(manifest), files);
  log << "wrote " << rows.size() << " rows to " << (out_dir / "sufficient_cluster.csv").string() << "\n";
  return kExitOk;
}

std::vector<BoundRow> bound_curve(const BoundsSection& b) {
  std::vector<std::int64_t> horizons;
  for (double t : log_grid(static_cast<double>(b.t_min), static_cast<double>(b.t_max),
                           static_cast<std::size_t>(b.t_points))) {
    const auto ti = static_cast<std::int64_t>(std::llround(t));
    if (horizons.empty() || ti > horizons.back()) horizons.push_back(ti);
  }
  std::vector<BoundRow> rows;
  for (auto t : horizons) {
    BoundInputs in{b.beta, b.mu, b.eps0, b.sigma_suf_sq, t, b.regime == StepRegime::constant ? b.eta : b.c};
    try {
      const auto ev = table1_bound(b.regime, in);
      rows.push_back({t, ev.bound, ev.step_size});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(e.what()) + " at T=" + std::to_string(t));
    }
  }
  return rows;
}

int cli_bounds(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log, std::ostream& err) {
  if (!cfg.bounds) {
    report_config_errors({{"bounds", "missing [bounds] table"}}, err);
    return kExitConfigError;
  }
  const auto& b = *cfg.bounds;
  std::vector<BoundRow> rows;
  std::vector<std::pair<double, std::int64_t>> complexity;
  try {
    rows = bound_curve(b);
    for (double eps : b.targets) complexity.emplace_back(eps, sample_complexity(eps, b.beta, b.mu, b.sigma_suf_sq, b.c));
  } catch (const std::invalid_argument& e) {
    report_config_errors({{"bounds", e.what()}}, err);
    return kExitConfigError;
  }

  const std::string regime = afo::to_string(b.regime);
  std::string curve = "regime,T,bound,step_size\n";
  for (const auto& r : rows) {
    curve += regime + "," + std::to_string(r.horizon) + "," + format_double(r.bound) + "," +
             format_double(r.step_size) + "\n";
  }
  std::string sc = "epsilon,T_eps\n";
  for (const auto& [eps, t] : complexity) {
    sc += format_double(eps) + "," + std::to_string(t) + "\n";
    log << "sample complexity: eps=" << eps << " -> T=" << t << "\n";
  }

  fs::create_directories(out_dir);
  std::vector<EmittedFile> files;
  files.push_back(emit(out_dir, "config.toml", to_toml(cfg)));
  files.push_back(emit(out_dir, "bounds.csv", curve));
  files.push_back(emit(out_dir, "sample_complexity.csv", sc));
  ordered_json manifest{{"kind", "bounds"},
                        {"experiment", cfg.experiment.name},
                        {"config_hash", config_hash(cfg)},
                        {"config_file", "config.toml"},
                        {"regime", regime}};
  write_manifest(out_dir, std::move(manifest), files);
  log << "wrote " << rows.size() << " bound points to " << (out_dir / "bounds.csv").string() << "\n";
  return kExitOk;
}

}  // namespace afo::harness
