#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "langevinmix/environment.hpp"
#include "langevinmix/model.hpp"
#include "langevinmix/random.hpp"

namespace lmx {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Exec { serial, parallel };

struct ChainConfig {
  double lambda = 0.0;
  double beta = 1.0;
  ParamVector theta0;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  bool out_of_theory = false;

  // Rejects lambda > Delta/K^2 unless allow_out_of_theory is set, in which case the
  // config is marked out of theory.
  static ChainConfig make(const ModelSpec& model, double lambda, ParamVector theta0,
                          std::size_t horizon, std::uint64_t seed,
                          bool allow_out_of_theory = false);
};

struct SplitKernelParams {
  int d = 1;
  double R = 0.0;
  double alpha_tilde = 0.0;
  double log_alpha_tilde = 0.0;
  // log of the density floor actually used on the ball, alpha_tilde / Vol(B_R)
  double log_density = 0.0;

  static SplitKernelParams from_model(const ModelSpec& model, double lambda, double R);
  nlohmann::json to_json() const;
};

struct KernelSetup {
  double lambda = 0.0;
  double beta = 1.0;
  std::optional<SplitKernelParams> split;
};

enum class StepMode { plain, split };

struct ChainRun {
  std::size_t d = 1;
  std::size_t start_time = 0;
  std::vector<double> thetas;  // row-major, states start_time..end
  FrozenTrajectory env_trace;  // data used at each step
  std::vector<std::uint64_t> eps_keys;
  std::vector<std::uint8_t> regenerated;
  bool out_of_theory = false;

  std::size_t states() const { return thetas.size() / d; }
  std::size_t steps() const { return states() == 0 ? 0 : states() - 1; }
  std::span<const double> theta(std::size_t i) const { return {thetas.data() + i * d, d}; }
  ParamVector final_state() const;
  std::vector<double> coordinate(std::size_t k) const;
};

void step_plain(const ModelSpec& model, double lambda, double beta, std::span<const double> theta,
                std::span<const double> y, std::span<const double> xi, std::span<double> out);
ParamVector step_plain(const ModelSpec& model, double lambda, double beta,
                       const ParamVector& theta, const DataPoint& y, const ParamVector& xi);

// Draws everything beyond the regeneration test from `sub`; returns the regeneration flag.
bool step_split(const ModelSpec& model, double lambda, double beta,
                const SplitKernelParams& split, std::span<const double> theta,
                std::span<const double> y, double eps, Substream& sub, std::span<double> out);
std::pair<ParamVector, bool> step_split(const ModelSpec& model, double lambda,
                                        const SplitKernelParams& split, const ParamVector& theta,
                                        const DataPoint& y, double eps, Substream& sub,
                                        double beta = 1.0);

// One kernel step keyed by eps_key: plain steps take their noise from the key's substream,
// split steps read the regeneration uniform off the key.
bool keyed_step(const ModelSpec& model, const KernelSetup& setup, std::span<const double> theta,
                std::span<const double> y, std::uint64_t eps_key, std::span<double> out,
                std::span<double> scratch);

std::uint64_t eps_root(std::uint64_t seed);
std::uint64_t env_seed(std::uint64_t seed);
std::vector<std::uint64_t> eps_key_range(std::uint64_t root, std::size_t count);

ChainRun run_chain(const ModelSpec& model, const DataStream& stream, const ChainConfig& cfg,
                   StepMode mode = StepMode::plain,
                   const std::optional<SplitKernelParams>& split = std::nullopt);

// Split-kernel (or plain, if setup.split is empty) chain against a frozen environment over
// [start_time, end_time]; eps_keys are indexed by absolute time.
ChainRun quenched_run(const ModelSpec& model, const KernelSetup& setup,
                      const FrozenTrajectory& frozen, std::size_t start_time,
                      const ParamVector& theta_start, std::size_t end_time,
                      std::span<const std::uint64_t> eps_keys);

// tau is the first joint regeneration (or 0 when the starts coincide). first_equal is the
// first bitwise equality, which shared Gaussian noise can produce earlier through rounding.
struct CoupledRun {
  std::optional<std::size_t> tau;
  std::optional<std::size_t> first_equal;
  ChainRun runs[2];
  std::size_t small_set_visits = 0;
  bool absorbing = true;
};

CoupledRun coupled_run(const ModelSpec& model, const KernelSetup& setup,
                       const FrozenTrajectory& frozen, const ParamVector& theta1,
                       const ParamVector& theta2, std::size_t horizon,
                       std::span<const std::uint64_t> eps_keys);

struct Theta2Law {
  enum class Kind { point, stationary };
  Kind kind = Kind::point;
  ParamVector point;
  std::size_t burn_in = 0;
};

struct CouplingCurve {
  std::vector<std::size_t> horizons;
  std::vector<double> no_coupling;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::size_t replicas = 0;
  double confidence = 0.99;
  double mean_small_set_visits = 0.0;
  std::size_t absorbing_violations = 0;
  // runs whose states became bitwise equal before their first joint regeneration
  std::size_t early_equalities = 0;

  nlohmann::json to_json() const;
};

CouplingCurve annealed_coupling_curve(const ModelSpec& model, const DataStream& stream,
                                      const KernelSetup& setup, const ParamVector& theta1,
                                      const Theta2Law& theta2_law,
                                      const std::vector<std::size_t>& horizons,
                                      std::size_t replicas, std::uint64_t seed,
                                      Exec exec = Exec::parallel, double confidence = 0.99);

void write_chain_csv(const ChainRun& run, const std::filesystem::path& path);

}  // namespace lmx
