// langevinmix: batch experiment driver. Exit codes: 0 pass, 1 fail, 2 usage or schema error.
#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <map>

#include "langevinmix/config.hpp"
#include "langevinmix/experiments.hpp"

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::optional<std::string> out;
  std::vector<double> sweep;
  bool serial = false;
  bool quiet = false;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("-c,--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "override chain.seed");
  sub->add_option("--threads", a.threads, "cap the replica thread pool (0 = all cores)")->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "output directory (overrides output.dir)");
  sub->add_flag("--serial", a.serial, "use the serial reference kernels");
  sub->add_flag("-q,--quiet", a.quiet, "only print the final verdict");
}

void print_summary(const lmx::ExperimentReport& r, bool quiet) {
  if (!quiet)
    for (const auto& c : r.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ' ' << c.detail.dump() << '\n';
  for (const auto& n : r.notes)
    if (!quiet) std::cout << "note: " << n << '\n';
  std::cout << r.experiment << ": " << (r.pass ? "PASS" : "FAIL") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGLD laboratory for dependent data streams"};
  app.set_version_flag("--version", lmx::version_string());
  app.require_subcommand(1);
  Args args;
  const std::map<std::string, std::string> blurbs{
      {"validate", "check the model's certified constants (and optionally the drift inequality)"},
      {"constants", "print drift, minorization and coupling constants"},
      {"run", "simulate one trajectory and write it out"},
      {"lln", "time averages against the stationary target"},
      {"clt", "long-run variance and Gaussian limit of the partial-sum path"},
      {"coupling", "empirical no-coupling curve against the coupling bound"},
      {"mixing", "estimated alpha-mixing of the chain against the transfer bound"},
      {"tv", "total variation to the grid stationary law"}};
  for (const auto& kind : lmx::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, blurbs.count(kind) ? blurbs.at(kind) : "");
    add_common(sub, args);
    if (kind == "constants")
      sub->add_option("--sweep", args.sweep, "step sizes for a constants sweep CSV")->delimiter(',');
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = lmx::ExperimentConfig::load(args.config);
    // validate and constants accept any config; experiments must match experiment.kind.
    if (command != "validate" && command != "constants" && cfg.kind != command)
      throw lmx::ConfigError("config is for experiment '" + cfg.kind + "', not '" + command + "'");
    lmx::RunOptions opts;
    opts.seed = args.seed;
    opts.threads = args.threads;
    if (args.out) opts.out_dir = *args.out;
    opts.exec = args.serial ? lmx::Exec::serial : lmx::Exec::parallel;
    opts.sweep = args.sweep;
    const auto report = lmx::run_command(command, cfg, opts);
    if (command == "constants") std::cout << std::setw(2) << report.constants << '\n';
    print_summary(report, args.quiet);
    return report.pass ? 0 : 1;
  } catch (const lmx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const lmx::ModelError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const lmx::EnvironmentError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
