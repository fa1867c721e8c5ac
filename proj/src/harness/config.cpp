#include "afo/harness/config.hpp"

#include "afo/harness/io.hpp"

#include <toml.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace afo::harness {

namespace {

std::string join_errors(const std::vector<FieldError>& errors) {
  std::ostringstream os;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (i) os << "\n";
    os << errors[i].field << ": " << errors[i].message;
  }
  return os.str();
}

// Typed access to one TOML table that records every problem instead of
// stopping at the first one, and flags keys nobody asked for.
class Reader {
 public:
  Reader(const toml::table& table, std::string path, std::vector<FieldError>& errors)
      : table_(table), path_(std::move(path)), errors_(errors) {}

  ~Reader() {
    for (const auto& [key, node] : table_) {
      const std::string k(key.str());
      if (!seen_.count(k)) errors_.push_back({field(k), "unknown key"});
    }
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return table_.contains(key);
  }

  void integer(const std::string& key, std::int64_t& out) {
    if (!has(key)) return;
    if (auto v = table_[key].value_exact<std::int64_t>()) {
      out = *v;
    } else {
      errors_.push_back({field(key), "expected an integer"});
    }
  }

  void integer(const std::string& key, std::optional<std::int64_t>& out) {
    if (!has(key)) return;
    std::int64_t v = 0;
    integer(key, v);
    out = v;
  }

  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto* node = table_.get(key);
    if (node->is_floating_point()) {
      out = node->as_floating_point()->get();
    } else if (node->is_integer()) {
      out = static_cast<double>(node->as_integer()->get());
    } else {
      errors_.push_back({field(key), "expected a number"});
    }
  }

  void real(const std::string& key, std::optional<double>& out) {
    if (!has(key)) return;
    double v = 0.0;
    real(key, v);
    out = v;
  }

  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    if (auto v = table_[key].value_exact<std::string>()) {
      out = *v;
    } else {
      errors_.push_back({field(key), "expected a string"});
    }
  }

  template <typename Enum>
  void choice(const std::string& key, Enum& out,
              std::initializer_list<std::pair<const char*, Enum>> options) {
    if (!has(key)) return;
    std::string s;
    string(key, s);
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (s == name) {
        out = value;
        return;
      }
      allowed += allowed.empty() ? name : std::string(", ") + name;
    }
    errors_.push_back({field(key), "unknown value '" + s + "' (expected one of: " + allowed + ")"});
  }

  void reals(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto* arr = table_.get_as<toml::array>(key);
    if (!arr) {
      errors_.push_back({field(key), "expected an array of numbers"});
      return;
    }
    out.clear();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto& n = (*arr)[i];
      if (n.is_floating_point()) {
        out.push_back(n.as_floating_point()->get());
      } else if (n.is_integer()) {
        out.push_back(static_cast<double>(n.as_integer()->get()));
      } else {
        errors_.push_back({field(key) + "[" + std::to_string(i) + "]", "expected a number"});
      }
    }
  }

  void seeds(const std::string& key, std::vector<std::uint64_t>& out) {
    if (!has(key)) return;
    const auto* arr = table_.get_as<toml::array>(key);
    if (!arr) {
      errors_.push_back({field(key), "expected an array of integers"});
      return;
    }
    out.clear();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto* v = (*arr)[i].as_integer();
      if (!v || v->get() < 0) {
        errors_.push_back({field(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer"});
        continue;
      }
      out.push_back(static_cast<std::uint64_t>(v->get()));
    }
  }

  const toml::table* subtable(const std::string& key) {
    if (!has(key)) return nullptr;
    const auto* t = table_.get_as<toml::table>(key);
    if (!t) errors_.push_back({field(key), "expected a table"});
    return t;
  }

  const toml::array* array(const std::string& key) {
    if (!has(key)) return nullptr;
    const auto* a = table_.get_as<toml::array>(key);
    if (!a) errors_.push_back({field(key), "expected an array of tables"});
    return a;
  }

 private:
  const toml::table& table_;
  std::string path_;
  std::vector<FieldError>& errors_;
  std::set<std::string> seen_;
};

void read_criterion(Reader& r, CriterionSection& c) {
  r.choice("kind", c.kind, {{"binary", Criterion::Kind::binary}, {"continuous", Criterion::Kind::continuous}});
  r.real("lambda", c.lambda);
}

ExperimentConfig from_table(const toml::table& root, std::vector<FieldError>& errors) {
  ExperimentConfig cfg;
  Reader top(root, "", errors);

  if (const auto* t = top.subtable("experiment")) {
    Reader r(*t, "experiment", errors);
    auto& e = cfg.experiment;
    r.string("name", e.name);
    r.integer("horizon", e.horizon);
    r.integer("log_every", e.log_every);
    r.seeds("seeds", e.seeds);
    r.string("output_dir", e.output_dir);
    std::int64_t p = static_cast<std::int64_t>(e.threshold_exponent);
    r.integer("threshold_exponent", p);
    if (p == 1) {
      e.threshold_exponent = ThresholdExponent::one;
    } else if (p == 2) {
      e.threshold_exponent = ThresholdExponent::two;
    } else {
      errors.push_back({"experiment.threshold_exponent", "must be 1 or 2"});
    }
    r.real("divergence_threshold", e.divergence_threshold);
  }

  if (const auto* t = top.subtable("objective")) {
    Reader r(*t, "objective", errors);
    auto& o = cfg.objective;
    r.choice("kind", o.kind, {{"lsr", ObjectiveKind::lsr}, {"quadratic", ObjectiveKind::quadratic}});
    r.integer("dim", o.dim);
    r.integer("n_clients", o.n_clients);
    r.integer("n_clusters", o.n_clusters);
    r.integer("batch_size", o.batch_size);
    r.integer("b_alpha", o.b_alpha);
    r.real("noise_sigma", o.noise_sigma);
    r.real("spectrum_min", o.spectrum_min);
    r.real("spectrum_max", o.spectrum_max);
    r.real("optimum_scale", o.optimum_scale);
  }

  if (const auto* t = top.subtable("criterion")) {
    Reader r(*t, "criterion", errors);
    read_criterion(r, cfg.criterion);
  }

  if (const auto* t = top.subtable("schedule")) {
    Reader r(*t, "schedule", errors);
    auto& s = cfg.schedule;
    r.choice("kind", s.kind,
             {{"constant", ScheduleKind::constant},
              {"horizon_dependent", ScheduleKind::horizon_dependent},
              {"decreasing", ScheduleKind::decreasing}});
    r.real("eta", s.eta);
    r.real("eta_fraction", s.eta_fraction);
    r.real("c", s.c);
    r.real("eps0", s.eps0);
    r.real("sigma_suf_sq", s.sigma_suf_sq);
  }

  if (const auto* arr = top.array("algorithms")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const std::string path = "algorithms[" + std::to_string(i) + "]";
      const auto* t = (*arr)[i].as_table();
      if (!t) {
        errors.push_back({path, "expected a table"});
        continue;
      }
      Reader r(*t, path, errors);
      AlgorithmEntry a;
      r.string("name", a.name);
      r.choice("kind", a.kind,
               {{"all_for_one", AlgoKind::all_for_one},
                {"oracle", AlgoKind::oracle},
                {"local", AlgoKind::local},
                {"fedavg", AlgoKind::fedavg}});
      if (const auto* ct = r.subtable("criterion")) {
        Reader cr(*ct, path + ".criterion", errors);
        CriterionSection c = cfg.criterion;
        read_criterion(cr, c);
        a.criterion = c;
      }
      std::string ratios = "estimated";
      r.string("ratios", ratios);
      if (ratios == "exact") {
        a.exact_ratios = true;
      } else if (ratios != "estimated") {
        errors.push_back({path + ".ratios", "unknown value '" + ratios + "' (expected one of: estimated, exact)"});
      }
      r.integer("b_alpha", a.b_alpha);
      r.integer("reestimate_every", a.reestimate_every);
      r.integer("local_steps", a.local_steps);
      cfg.algorithms.push_back(std::move(a));
    }
  }

  if (const auto* t = top.subtable("sufficient_cluster")) {
    Reader r(*t, "sufficient_cluster", errors);
    SufficientClusterSection s;
    r.reals("v", s.v);
    r.integer("n_clients", s.n_clients);
    r.integer("dim", s.dim);
    r.real("sigma", s.sigma);
    r.integer("focal", s.focal);
    r.real("eps_min", s.eps_min);
    r.real("eps_max", s.eps_max);
    r.integer("eps_points", s.eps_points);
    r.choice("scaling", s.scaling,
             {{"hessian", HeterogeneityScaling::hessian}, {"literal", HeterogeneityScaling::literal}});
    cfg.sufficient_cluster = s;
  }

  if (const auto* t = top.subtable("bounds")) {
    Reader r(*t, "bounds", errors);
    BoundsSection b;
    r.choice("regime", b.regime,
             {{"constant", StepRegime::constant},
              {"horizon_dependent", StepRegime::horizon_dependent},
              {"decreasing", StepRegime::decreasing}});
    r.real("beta", b.beta);
    r.real("mu", b.mu);
    r.real("eps0", b.eps0);
    r.real("sigma_suf_sq", b.sigma_suf_sq);
    r.real("eta", b.eta);
    r.real("c", b.c);
    r.integer("t_min", b.t_min);
    r.integer("t_max", b.t_max);
    r.integer("t_points", b.t_points);
    r.reals("targets", b.targets);
    cfg.bounds = b;
  }
  return cfg;
}

void check(std::vector<FieldError>& errors, bool ok, std::string field, std::string message) {
  if (!ok) errors.push_back({std::move(field), std::move(message)});
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

ConfigError::ConfigError(std::vector<FieldError> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& err) {
    std::ostringstream os;
    os << err.description() << " (line " << err.source().begin.line << ", column "
       << err.source().begin.column << ")";
    throw ConfigError({{source, os.str()}});
  }
  std::vector<FieldError> errors;
  ExperimentConfig cfg = from_table(root, errors);
  if (errors.empty()) errors = validate(cfg);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({{path.string(), "cannot open file"}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::vector<FieldError> validate(const ExperimentConfig& cfg) {
  std::vector<FieldError> e;
  const auto& ex = cfg.experiment;
  check(e, !ex.name.empty(), "experiment.name", "must not be empty");
  check(e, ex.horizon >= 1, "experiment.horizon", "must be >= 1");
  check(e, ex.log_every >= 1, "experiment.log_every", "must be >= 1");
  check(e, !ex.seeds.empty(), "experiment.seeds", "must list at least one seed");
  for (std::size_t i = 0; i < ex.seeds.size(); ++i) {
    check(e, ex.seeds[i] <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()),
          "experiment.seeds[" + std::to_string(i) + "]", "must fit in a signed 64-bit integer");
  }
  check(e, std::set<std::uint64_t>(ex.seeds.begin(), ex.seeds.end()).size() == ex.seeds.size(),
        "experiment.seeds", "seeds must be distinct");
  check(e, ex.divergence_threshold > 0.0 && finite(ex.divergence_threshold), "experiment.divergence_threshold",
        "must be a positive finite number");

  const auto& o = cfg.objective;
  check(e, o.dim >= 1 && o.dim <= 4096, "objective.dim", "must be in [1, 4096]");
  check(e, o.n_clients >= 1 && o.n_clients <= 100000, "objective.n_clients", "must be in [1, 100000]");
  check(e, o.n_clusters >= 1 && o.n_clusters <= o.n_clients, "objective.n_clusters",
        "must be in [1, n_clients]");
  check(e, o.batch_size >= 1, "objective.batch_size", "must be >= 1");
  check(e, o.b_alpha >= 1, "objective.b_alpha", "must be >= 1");
  check(e, o.noise_sigma >= 0.0 && finite(o.noise_sigma), "objective.noise_sigma", "must be >= 0");
  check(e, o.spectrum_min > 0.0 && finite(o.spectrum_min), "objective.spectrum_min", "must be > 0");
  check(e, o.spectrum_max >= o.spectrum_min && finite(o.spectrum_max), "objective.spectrum_max",
        "must be >= spectrum_min");
  check(e, o.optimum_scale >= 0.0 && finite(o.optimum_scale), "objective.optimum_scale", "must be >= 0");

  auto check_criterion = [&](const CriterionSection& c, const std::string& path) {
    if (c.kind == Criterion::Kind::binary) {
      check(e, c.lambda > 0.0 && c.lambda <= 1.0, path + ".lambda", "must be in (0, 1]");
    }
  };
  check_criterion(cfg.criterion, "criterion");

  const auto& s = cfg.schedule;
  if (s.eta) check(e, *s.eta > 0.0 && finite(*s.eta), "schedule.eta", "must be > 0");
  check(e, s.eta_fraction > 0.0 && s.eta_fraction <= 1.0, "schedule.eta_fraction", "must be in (0, 1]");
  if (s.kind == ScheduleKind::decreasing) check(e, s.c > 1.0 && finite(s.c), "schedule.c", "must be > 1");
  if (s.eps0) check(e, *s.eps0 > 0.0 && finite(*s.eps0), "schedule.eps0", "must be > 0");
  if (s.sigma_suf_sq) {
    check(e, *s.sigma_suf_sq > 0.0 && finite(*s.sigma_suf_sq), "schedule.sigma_suf_sq", "must be > 0");
  }
  if (s.kind == ScheduleKind::horizon_dependent && o.kind == ObjectiveKind::lsr) {
    check(e, s.eps0.has_value(), "schedule.eps0", "required by the horizon-dependent schedule on lsr objectives");
    check(e, s.sigma_suf_sq.has_value(), "schedule.sigma_suf_sq",
          "required by the horizon-dependent schedule on lsr objectives");
  }

  std::set<std::string> names;
  for (std::size_t i = 0; i < cfg.algorithms.size(); ++i) {
    const auto& a = cfg.algorithms[i];
    const std::string path = "algorithms[" + std::to_string(i) + "]";
    check(e, !a.name.empty(), path + ".name", "must not be empty");
    check(e, a.name.find_first_of(",\"/\\ \t\n") == std::string::npos, path + ".name",
          "must not contain separators, quotes or whitespace");
    check(e, names.insert(a.name).second, path + ".name", "duplicate algorithm name '" + a.name + "'");
    if (a.criterion) check_criterion(*a.criterion, path + ".criterion");
    if (a.b_alpha) check(e, *a.b_alpha >= 1, path + ".b_alpha", "must be >= 1");
    check(e, a.reestimate_every >= 1, path + ".reestimate_every", "must be >= 1");
    check(e, a.local_steps >= 1, path + ".local_steps", "must be >= 1");
    if (a.kind != AlgoKind::all_for_one) {
      check(e, !a.criterion && !a.exact_ratios && !a.b_alpha, path,
            "criterion, ratios and b_alpha only apply to all_for_one");
    }
  }

  if (cfg.sufficient_cluster) {
    const auto& sc = *cfg.sufficient_cluster;
    check(e, !sc.v.empty(), "sufficient_cluster.v", "must list at least one value");
    for (std::size_t i = 0; i < sc.v.size(); ++i) {
      check(e, sc.v[i] >= 0.0 && finite(sc.v[i]), "sufficient_cluster.v[" + std::to_string(i) + "]",
            "must be >= 0");
    }
    check(e, sc.n_clients >= 1 && sc.n_clients <= 100000, "sufficient_cluster.n_clients",
          "must be in [1, 100000]");
    check(e, sc.dim >= 1 && sc.dim <= 4096, "sufficient_cluster.dim", "must be in [1, 4096]");
    check(e, sc.sigma > 0.0 && finite(sc.sigma), "sufficient_cluster.sigma", "must be > 0");
    check(e, sc.focal >= 0 && sc.focal < sc.n_clients, "sufficient_cluster.focal", "must be in [0, n_clients)");
    check(e, sc.eps_min > 0.0 && finite(sc.eps_min), "sufficient_cluster.eps_min", "must be > 0");
    check(e, sc.eps_max > sc.eps_min && finite(sc.eps_max), "sufficient_cluster.eps_max", "must be > eps_min");
    check(e, sc.eps_points >= 2, "sufficient_cluster.eps_points", "must be >= 2");
  }

  if (cfg.bounds) {
    const auto& b = *cfg.bounds;
    check(e, b.beta > 0.0 && finite(b.beta), "bounds.beta", "must be > 0");
    check(e, b.mu > 0.0 && b.mu <= b.beta, "bounds.mu", "must be in (0, beta]");
    check(e, b.eps0 >= 0.0 && finite(b.eps0), "bounds.eps0", "must be >= 0");
    check(e, b.sigma_suf_sq >= 0.0 && finite(b.sigma_suf_sq), "bounds.sigma_suf_sq", "must be >= 0");
    check(e, b.t_min >= 1, "bounds.t_min", "must be >= 1");
    check(e, b.t_max >= b.t_min, "bounds.t_max", "must be >= t_min");
    check(e, b.t_points >= 1, "bounds.t_points", "must be >= 1");
    if (b.regime == StepRegime::constant) {
      check(e, b.eta > 0.0 && b.eta <= 1.0 / b.mu, "bounds.eta", "must be in (0, 1/mu]");
    }
    check(e, b.c > 1.0 && finite(b.c), "bounds.c", "must be > 1");
    for (std::size_t i = 0; i < b.targets.size(); ++i) {
      check(e, b.targets[i] > 0.0 && finite(b.targets[i]), "bounds.targets[" + std::to_string(i) + "]",
            "must be > 0");
    }
  }
  return e;
}

std::vector<FieldError> validate_for_run(const ExperimentConfig& cfg) {
  std::vector<FieldError> e = validate(cfg);
  check(e, !cfg.algorithms.empty(), "algorithms", "the run command needs at least one [[algorithms]] entry");
  return e;
}

namespace {

const char* criterion_name(Criterion::Kind k) { return k == Criterion::Kind::binary ? "binary" : "continuous"; }

toml::table criterion_table(const CriterionSection& c) {
  toml::table t;
  t.insert("kind", criterion_name(c.kind));
  t.insert("lambda", c.lambda);
  return t;
}

}  // namespace

std::string to_string(AlgoKind kind) {
  switch (kind) {
    case AlgoKind::all_for_one: return "all_for_one";
    case AlgoKind::oracle: return "oracle";
    case AlgoKind::local: return "local";
    case AlgoKind::fedavg: return "fedavg";
  }
  return "unknown";
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::horizon_dependent: return "horizon_dependent";
    case ScheduleKind::decreasing: return "decreasing";
  }
  return "unknown";
}

std::string to_toml(const ExperimentConfig& cfg) {
  toml::table root;

  toml::table ex;
  ex.insert("name", cfg.experiment.name);
  ex.insert("horizon", cfg.experiment.horizon);
  ex.insert("log_every", cfg.experiment.log_every);
  toml::array seeds;
  for (auto s : cfg.experiment.seeds) seeds.push_back(static_cast<std::int64_t>(s));
  ex.insert("seeds", seeds);
  if (!cfg.experiment.output_dir.empty()) ex.insert("output_dir", cfg.experiment.output_dir);
  ex.insert("threshold_exponent", static_cast<std::int64_t>(cfg.experiment.threshold_exponent));
  ex.insert("divergence_threshold", cfg.experiment.divergence_threshold);
  root.insert("experiment", ex);

  const auto& o = cfg.objective;
  toml::table ob;
  ob.insert("kind", o.kind == ObjectiveKind::lsr ? "lsr" : "quadratic");
  ob.insert("dim", o.dim);
  ob.insert("n_clients", o.n_clients);
  ob.insert("n_clusters", o.n_clusters);
  ob.insert("batch_size", o.batch_size);
  ob.insert("b_alpha", o.b_alpha);
  ob.insert("noise_sigma", o.noise_sigma);
  ob.insert("spectrum_min", o.spectrum_min);
  ob.insert("spectrum_max", o.spectrum_max);
  ob.insert("optimum_scale", o.optimum_scale);
  root.insert("objective", ob);

  root.insert("criterion", criterion_table(cfg.criterion));

  const auto& s = cfg.schedule;
  toml::table sc;
  sc.insert("kind", to_string(s.kind));
  if (s.eta) sc.insert("eta", *s.eta);
  sc.insert("eta_fraction", s.eta_fraction);
  sc.insert("c", s.c);
  if (s.eps0) sc.insert("eps0", *s.eps0);
  if (s.sigma_suf_sq) sc.insert("sigma_suf_sq", *s.sigma_suf_sq);
  root.insert("schedule", sc);

  if (!cfg.algorithms.empty()) {
    toml::array algos;
    for (const auto& a : cfg.algorithms) {
      toml::table t;
      t.insert("name", a.name);
      t.insert("kind", to_string(a.kind));
      if (a.criterion) t.insert("criterion", criterion_table(*a.criterion));
      if (a.kind == AlgoKind::all_for_one) t.insert("ratios", a.exact_ratios ? "exact" : "estimated");
      if (a.b_alpha) t.insert("b_alpha", *a.b_alpha);
      t.insert("reestimate_every", a.reestimate_every);
      t.insert("local_steps", a.local_steps);
      algos.push_back(std::move(t));
    }
    root.insert("algorithms", algos);
  }

  if (cfg.sufficient_cluster) {
    const auto& c = *cfg.sufficient_cluster;
    toml::table t;
    toml::array v;
    for (double x : c.v) v.push_back(x);
    t.insert("v", v);
    t.insert("n_clients", c.n_clients);
    t.insert("dim", c.dim);
    t.insert("sigma", c.sigma);
    t.insert("focal", c.focal);
    t.insert("eps_min", c.eps_min);
    t.insert("eps_max", c.eps_max);
    t.insert("eps_points", c.eps_points);
    t.insert("scaling", c.scaling == HeterogeneityScaling::hessian ? "hessian" : "literal");
    root.insert("sufficient_cluster", t);
  }

  if (cfg.bounds) {
    const auto& b = *cfg.bounds;
    toml::table t;
    t.insert("regime", afo::to_string(b.regime));
    t.insert("beta", b.beta);
    t.insert("mu", b.mu);
    t.insert("eps0", b.eps0);
    t.insert("sigma_suf_sq", b.sigma_suf_sq);
    t.insert("eta", b.eta);
    t.insert("c", b.c);
    t.insert("t_min", b.t_min);
    t.insert("t_max", b.t_max);
    t.insert("t_points", b.t_points);
    toml::array targets;
    for (double x : b.targets) targets.push_back(x);
    t.insert("targets", targets);
    root.insert("bounds", t);
  }

  std::ostringstream os;
  os << toml::toml_formatter(root) << "\n";
  return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_toml(cfg)).substr(0, 16); }

}  // namespace afo::harness
