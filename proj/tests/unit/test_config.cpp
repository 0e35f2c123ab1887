#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "langevinmix/config.hpp"
#include "langevinmix/experiments.hpp"

using namespace lmx;
using nlohmann::json;

namespace {

const std::filesystem::path kConfigs = LMX_CONFIG_DIR;
const std::filesystem::path kTmp = LMX_TEST_TMP;

json minimal() {
  return json::parse(R"({
    "model": {"name": "linear", "d": 1},
    "stream": {"kind": "iid_bounded", "m": 1, "half_width": 1.0, "shape": "box"},
    "chain": {"lambda": 0.25, "theta0": [0.0], "horizon": 10, "seed": 3},
    "experiment": {"kind": "constants"}
  })");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunOptions quiet(int threads = 1) {
  RunOptions o;
  o.threads = threads;
  o.write_files = false;
  return o;
}

}  // namespace

TEST_CASE("every shipped config parses") {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().string());
    const auto cfg = ExperimentConfig::load(e.path());
    const auto stream = build_stream(cfg.stream);
    CHECK_NOTHROW(build_model(cfg, stream));
    ++n;
  }
  CHECK(n >= 10);
}

TEST_CASE("parse defaults") {
  const auto cfg = ExperimentConfig::parse(minimal());
  CHECK(cfg.chain.beta == 1.0);
  CHECK(cfg.chain.replicas == 1);
  CHECK_FALSE(cfg.chain.allow_out_of_theory);
  CHECK(cfg.output.dir == "out");
  CHECK(cfg.kind == "constants");
  CHECK(cfg.knob<double>("missing", 4.5) == 4.5);
}

TEST_CASE("parse errors") {
  auto bad = [](auto edit) {
    json j = minimal();
    edit(j);
    return j;
  };
  CHECK_THROWS_AS(ExperimentConfig::parse(json::array()), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j.erase("model"); })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["model"]["name"] = "quadratic"; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["chain"]["lambda"] = "fast"; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["chain"]["lambda"] = -0.1; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["chain"]["lambda_typo"] = 0.1; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["chain"]["replicas"] = 0; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["chain"]["horizon"] = -1; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["experiment"]["kind"] = "sample"; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["output"] = {{"formats", {"xml"}}}; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["stream"]["kind"] = "gaussian"; })), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(bad([](json& j) { j["stream"]["shape"] = "star"; })), ConfigError);
  {
    const auto wide = ExperimentConfig::parse(bad([](json& j) { j["chain"]["theta0"] = {0.0, 1.0}; }));
    CHECK_THROWS_AS(build_model(wide, build_stream(wide.stream)), ConfigError);
  }
  CHECK_THROWS_AS(ExperimentConfig::load(kConfigs / "does_not_exist.json"), ConfigError);
  std::filesystem::create_directories(kTmp);
  std::ofstream(kTmp / "broken.json") << "{ \"model\": ";
  CHECK_THROWS_AS(ExperimentConfig::load(kTmp / "broken.json"), ConfigError);
  const auto cfg = ExperimentConfig::parse(bad([](json& j) { j["experiment"]["n_mc"] = "many"; }));
  CHECK_THROWS_AS(cfg.knob<std::size_t>("n_mc", 1), ConfigError);
}

TEST_CASE("config digest") {
  const auto a = ExperimentConfig::parse(minimal());
  const auto b = ExperimentConfig::parse(json::parse(minimal().dump(4)));
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 64);
  CHECK(a.with_seed(4).digest() != a.digest());
  CHECK(a.with_seed(3).digest() == a.digest());
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("reports are byte-identical across reruns") {
  const auto cfg = ExperimentConfig::load(kConfigs / "linear_constants.json");
  const auto r1 = run_constants(cfg, quiet());
  const auto r2 = run_constants(cfg, quiet());
  CHECK(r1.to_json(false).dump() == r2.to_json(false).dump());

  const auto lln = ExperimentConfig::load(kConfigs / "linear_lln.json");
  CHECK(run_lln(lln, quiet()).to_json(false).dump() == run_lln(lln, quiet()).to_json(false).dump());

  RunOptions files = quiet();
  files.write_files = true;
  files.out_dir = kTmp / "a";
  const auto rep = run_constants(cfg, files);
  files.out_dir = kTmp / "b";
  run_constants(cfg, files);
  const auto ja = json::parse(slurp(kTmp / "a" / "report.json"));
  const auto jb = json::parse(slurp(kTmp / "b" / "report.json"));
  auto strip = [](json j) {
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  CHECK(strip(ja) == strip(jb));
  CHECK(ja["config_digest"] == cfg.digest());
  CHECK(ja["pass"] == rep.pass);
  for (const auto& [name, table] : rep.curves)
    CHECK(slurp(kTmp / "a" / (name + ".csv")) == slurp(kTmp / "b" / (name + ".csv")));
}

TEST_CASE("reports do not depend on the thread count") {
  const auto cfg = ExperimentConfig::load(kConfigs / "linear_coupling.json");
  const auto one = run_coupling(cfg, quiet(1)).to_json(false);
  auto many = run_coupling(cfg, quiet(4)).to_json(false);
  auto serial_opts = quiet(1);
  serial_opts.exec = Exec::serial;
  auto serial = run_coupling(cfg, serial_opts).to_json(false);
  many["threads"] = one["threads"];
  serial["threads"] = one["threads"];
  CHECK(one.dump() == many.dump());
  CHECK(one.dump() == serial.dump());
}

TEST_CASE("seed override changes the stochastic output") {
  const auto cfg = ExperimentConfig::load(kConfigs / "linear_lln.json");
  auto o = quiet();
  const auto a = run_lln(cfg, o);
  o.seed = 99;
  const auto b = run_lln(cfg, o);
  CHECK(a.seed != b.seed);
  CHECK(a.estimates.dump() != b.estimates.dump());
  CHECK(a.config_digest != b.config_digest);
}

TEST_CASE("experiment kinds and dispatch") {
  const auto& kinds = experiment_kinds();
  for (const char* k : {"validate", "constants", "run", "lln", "clt", "coupling", "mixing", "tv"})
    CHECK(std::find(kinds.begin(), kinds.end(), k) != kinds.end());
  const auto cfg = ExperimentConfig::parse(minimal());
  CHECK_THROWS(run_command("sample", cfg, quiet()));
  CHECK(run_command("constants", cfg, quiet()).experiment == "constants");
}
