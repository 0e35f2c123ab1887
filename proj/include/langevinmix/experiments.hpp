#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "langevinmix/config.hpp"
#include "langevinmix/engine.hpp"

namespace lmx {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void write(const std::filesystem::path& path) const;
};

struct Check {
  std::string name;
  bool pass = false;
  nlohmann::json detail;
};

struct ExperimentReport {
  std::string experiment;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string version;
  int threads = 1;
  double wall_clock_seconds = 0.0;
  bool out_of_theory = false;
  nlohmann::json model;
  nlohmann::json stream;
  nlohmann::json constants;
  nlohmann::json estimates = nlohmann::json::object();
  nlohmann::json bounds = nlohmann::json::object();
  std::vector<Check> checks;
  std::vector<std::string> notes;
  std::map<std::string, CsvTable> curves;
  bool pass = true;

  void add_check(std::string name, bool ok, nlohmann::json detail = nlohmann::json::object());
  const Check* find_check(const std::string& name) const;
  nlohmann::json to_json(bool include_wall_clock = true) const;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::optional<std::filesystem::path> out_dir;
  bool write_files = true;
  Exec exec = Exec::parallel;
  std::vector<double> sweep;
};

std::string version_string();

ExperimentReport run_validate(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_constants(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_trajectory(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_lln(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_clt(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_coupling(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_mixing(const ExperimentConfig& cfg, const RunOptions& opts);
ExperimentReport run_tv(const ExperimentConfig& cfg, const RunOptions& opts);

// Dispatches on a subcommand name (validate, constants, run, lln, clt, coupling, mixing, tv).
ExperimentReport run_command(const std::string& command, const ExperimentConfig& cfg,
                             const RunOptions& opts);

void write_report(const ExperimentReport& report, const std::filesystem::path& dir,
                  const std::vector<std::string>& formats);

// argmax of alpha_tilde(R) over a log-spaced grid of radii
double best_regeneration_radius(const ModelSpec& model, double lambda);

}  // namespace lmx
