#include "afo/harness/commands.hpp"
#include "afo/harness/config.hpp"
#include "afo/harness/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace afo;
using namespace afo::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  fs::path p = fs::temp_directory_path() / ("afo_test_" + tag + "_" + std::to_string(rng()));
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(AFO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string preset(const std::string& name) { return std::string(AFO_PRESET_DIR) + "/" + name + ".toml"; }

const char* kMinimal = R"(
[experiment]
name = "minimal"
horizon = 10
log_every = 1
seeds = [5]

[objective]
kind = "quadratic"
dim = 2
n_clients = 1
n_clusters = 1
noise_sigma = 0.1

[[algorithms]]
name = "local"
kind = "local"
)";

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("number formatting") {
  CHECK(format_double(1.0) == "1.0000000000000000e+00");
  CHECK(format_double(0.1) == "1.0000000000000001e-01");
  CHECK(format_double(-2.5e-300) == "-2.5000000000000000e-300");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(std::nan("")) == "nan");
  for (double x : {1.0 / 3.0, 2.718281828459045, 1e-17, 6.02e23}) CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("csv rows") {
  MetricRow r;
  r.iter = 3;
  r.client = 1;
  r.excess_loss = 0.5;
  r.active_set_size = 2;
  r.grad_evals_total = 9;
  const auto csv = metrics_csv("local_s5", "abcd", "local", 5, {r});
  CHECK(csv.substr(0, csv.find('\n')) == kCsvHeader);
  CHECK(csv.find("local_s5,abcd,local,5,3,1,5.0000000000000000e-01,") != std::string::npos);
  CHECK(csv.back() == '\n');
  CHECK(run_id("afo_bin", 127) == "afo_bin_s127");
}

TEST_CASE("config parsing and round trip") {
  for (const char* name : {"fig1", "fig2_d2", "fig2_d10", "bounds"}) {
    const auto cfg = load_config(preset(name));
    const auto text = to_toml(cfg);
    const auto again = parse_config(text);
    CHECK(again == cfg);
    CHECK(to_toml(again) == text);
    CHECK(config_hash(again) == config_hash(cfg));
  }
  const auto cfg = load_config(preset("fig2_d2"));
  CHECK(cfg.algorithms.size() == 6);
  CHECK(cfg.experiment.seeds == std::vector<std::uint64_t>{127, 496, 1729});
  CHECK(cfg.objective.dim == 2);
  CHECK(cfg.algorithms[1].criterion->kind == Criterion::Kind::binary);
  CHECK(cfg.algorithms[3].exact_ratios);

  auto changed = cfg;
  changed.schedule.eta_fraction = 0.25;
  CHECK(config_hash(changed) != config_hash(cfg));

  // odd values survive the round trip bit for bit
  changed.schedule.eta = 0.1 + 0.2;
  changed.objective.noise_sigma = 1.0 / 3.0;
  CHECK(parse_config(to_toml(changed)) == changed);
}

TEST_CASE("config diagnostics name the field") {
  auto errors_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.errors();
    }
    return std::vector<FieldError>{};
  };
  auto has = [](const std::vector<FieldError>& es, const std::string& field) {
    return std::any_of(es.begin(), es.end(), [&](const FieldError& e) { return e.field == field; });
  };
  CHECK(has(errors_of("[experiment]\nhorizon = 0\n"), "experiment.horizon"));
  CHECK(has(errors_of("[experiment]\nhorizon = \"ten\"\n"), "experiment.horizon"));
  CHECK(has(errors_of("[criterion]\nkind = \"binary\"\nlambda = 1.5\n"), "criterion.lambda"));
  CHECK(has(errors_of("[objective]\nkind = \"logistic\"\n"), "objective.kind"));
  CHECK(has(errors_of("[objective]\ndimension = 3\n"), "objective.dimension"));
  CHECK(has(errors_of("[[algorithms]]\nname = \"a\"\nkind = \"local\"\n[[algorithms]]\nname = \"a\"\nkind = \"local\"\n"),
            "algorithms[1].name"));
  CHECK(has(errors_of("[schedule]\nkind = \"decreasing\"\nc = 1.0\n"), "schedule.c"));
  CHECK(has(errors_of("[schedule]\nkind = \"horizon_dependent\"\n"), "schedule.eps0"));
  CHECK(has(errors_of("[experiment]\nthreshold_exponent = 3\n"), "experiment.threshold_exponent"));
  CHECK(!errors_of("[experiment\n").empty());
  CHECK(errors_of(kMinimal).empty());
}

TEST_CASE("run command") {
  const auto dir = scratch_dir("run");
  SUBCASE("minimal config gives T / log_every rows") {
    spit(dir / "min.toml", kMinimal);
    REQUIRE(cli("run --config " + (dir / "min.toml").string() + " --out " + (dir / "out").string()) == 0);
    const auto csv = slurp(dir / "out" / "local_s5.csv");
    CHECK(count_lines(csv) == 11);
    CHECK(csv.substr(0, csv.find('\n')) == kCsvHeader);
  }
  SUBCASE("malformed TOML leaves no output") {
    spit(dir / "bad.toml", "[experiment\nname = ");
    CHECK(cli("run --config " + (dir / "bad.toml").string() + " --out " + (dir / "bad_out").string()) == 2);
    CHECK(!fs::exists(dir / "bad_out"));
    spit(dir / "bad2.toml", std::string(kMinimal) + "\n[schedule]\neta_fraction = 7\n");
    CHECK(cli("run --config " + (dir / "bad2.toml").string() + " --out " + (dir / "bad_out").string()) == 2);
    CHECK(!fs::exists(dir / "bad_out"));
    CHECK(cli("run --config " + (dir / "missing.toml").string() + " --out " + (dir / "bad_out").string()) == 2);
    CHECK(!fs::exists(dir / "bad_out"));
  }
  SUBCASE("fig2 d=2 preset: 18 runs, manifest digests, determinism") {
    const auto out1 = dir / "a", out2 = dir / "b";
    REQUIRE(cli("run --config " + preset("fig2_d2") + " --out " + out1.string() + " --jobs 3") == 0);
    REQUIRE(cli("run --config " + preset("fig2_d2") + " --out " + out2.string() + " --jobs 1") == 0);
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(out1)) csvs += e.path().extension() == ".csv";
    CHECK(csvs == 18);
    const auto manifest = nlohmann::json::parse(slurp(out1 / "manifest.json"));
    CHECK(manifest["runs"].size() == 18);
    for (const auto& f : manifest["files"]) {
      const auto p = out1 / f["path"].get<std::string>();
      CHECK(sha256_file(p) == f["sha256"].get<std::string>());
      CHECK(slurp(p) == slurp(out2 / f["path"].get<std::string>()));
    }
    CHECK(slurp(out1 / "manifest.json") == slurp(out2 / "manifest.json"));
  }
  SUBCASE("seed override") {
    const auto out = dir / "seed";
    REQUIRE(cli("run --config " + preset("fig2_d2") + " --out " + out.string() + " --seed-override 9") == 0);
    CHECK(fs::exists(out / "local_s9.csv"));
    CHECK(!fs::exists(out / "local_s127.csv"));
  }
  SUBCASE("divergence exits 3 with a diagnostic record") {
    spit(dir / "div.toml", std::string(kMinimal).replace(std::string(kMinimal).find("seeds"), 0,
                                                         "divergence_threshold = 1e-300\n"));
    CHECK(cli("run --config " + (dir / "div.toml").string() + " --out " + (dir / "div").string()) == 3);
    CHECK(fs::exists(dir / "div" / "divergence_local_s5.json"));
    const auto m = nlohmann::json::parse(slurp(dir / "div" / "manifest.json"));
    CHECK(m["runs"][0]["status"] == "diverged");
  }
  fs::remove_all(dir);
}

TEST_CASE("validate-config") {
  CHECK(cli("validate-config --config " + preset("fig2_d10")) == 0);
  const auto dir = scratch_dir("validate");
  spit(dir / "bad.toml", "[criterion]\nkind = \"binary\"\nlambda = 0\n");
  CHECK(cli("validate-config --config " + (dir / "bad.toml").string()) == 2);
  CHECK(cli("frobnicate") == 2);
  fs::remove_all(dir);
}

TEST_CASE("sufficient cluster generator") {
  auto cfg = load_config(preset("fig1"));
  cfg.sufficient_cluster->v = {0.0, 1.0, 0.001};
  const auto rows = sufficient_cluster_curves(cfg, 127);
  const auto n = static_cast<std::size_t>(cfg.sufficient_cluster->n_clients);
  for (const auto& r : rows) {
    if (r.v == 0.0) CHECK(r.cluster_size == n);
  }
  const auto pts = static_cast<std::size_t>(cfg.sufficient_cluster->eps_points);
  CHECK(rows[pts].v == 1.0);
  CHECK(rows[pts].cluster_size == 1);                // v = 1, smallest eps
  CHECK(rows[3 * pts - 1].cluster_size == n);        // v = 0.001, largest eps

  const auto dir = scratch_dir("fig1");
  REQUIRE(cli("sufficient-cluster --config " + preset("fig1") + " --out " + dir.string()) == 0);
  const auto csv = slurp(dir / "sufficient_cluster.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "v,epsilon,cluster_size,sigma_suf_sq");
  CHECK(count_lines(csv) == 1 + 4 * pts);
  fs::remove_all(dir);
}

TEST_CASE("bounds command") {
  auto cfg = load_config(preset("bounds"));
  auto& b = *cfg.bounds;
  b.regime = StepRegime::constant;
  b.eta = 0.5;
  b.eps0 = 3.0;
  const auto rows = bound_curve(b);
  for (std::size_t j = 1; j < rows.size(); ++j) CHECK(rows[j].bound <= rows[j - 1].bound);
  CHECK(rows.back().bound == doctest::Approx(0.5 * 1.0 * 1.0 / 2.0));

  b.regime = StepRegime::decreasing;
  const auto dec = bound_curve(b);
  for (const auto& r : dec) {
    if (r.horizon >= 10) CHECK(r.bound * static_cast<double>(r.horizon) == doctest::Approx(3.0));
  }

  const auto dir = scratch_dir("bounds");
  REQUIRE(cli("bounds --config " + preset("bounds") + " --out " + dir.string()) == 0);
  const auto sc = slurp(dir / "sample_complexity.csv");
  CHECK(sc.find("1.0000000000000001e-01,20\n") != std::string::npos);

  spit(dir / "bad.toml", "[bounds]\nregime = \"horizon_dependent\"\neps0 = 1e-9\nt_max = 10\nt_points = 3\n");
  CHECK(cli("bounds --config " + (dir / "bad.toml").string() + " --out " + (dir / "o").string()) == 2);
  fs::remove_all(dir);
}
