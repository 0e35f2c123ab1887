#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "langevinmix/environment.hpp"
#include "langevinmix/model.hpp"

namespace lmx {

// Schema or usage problems; the CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelBlock {
  std::string name;
  int d = 1;
  std::optional<double> M;
  double c = 0.0;
  double M_z = 0.0;
  std::optional<CertifiedConstants> constants;
};

struct ChainBlock {
  double lambda = 0.0;
  double beta = 1.0;
  std::vector<double> theta0;
  std::size_t horizon = 1;
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  bool allow_out_of_theory = false;
};

struct OutputBlock {
  std::string dir = "out";
  std::vector<std::string> formats{"json", "csv"};
};

struct ExperimentConfig {
  nlohmann::json raw;
  ModelBlock model;
  nlohmann::json stream;
  ChainBlock chain;
  std::string kind;
  nlohmann::json experiment;
  OutputBlock output;

  static ExperimentConfig parse(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  std::string digest() const;
  ExperimentConfig with_seed(std::uint64_t seed) const;

  // Experiment knob with a default; type errors raise ConfigError.
  template <class T>
  T knob(const std::string& key, T fallback) const {
    if (!experiment.contains(key)) return fallback;
    try {
      return experiment.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("experiment." + key + " has the wrong type");
    }
  }
};

DataStream build_stream(const nlohmann::json& j);
ModelSpec build_model(const ExperimentConfig& cfg, const DataStream& stream);

std::string sha256_hex(const std::string& data);

const std::vector<std::string>& experiment_kinds();

}  // namespace lmx
