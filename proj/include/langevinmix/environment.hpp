#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "langevinmix/model.hpp"
#include "langevinmix/random.hpp"

namespace lmx {

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Matrix = std::vector<std::vector<double>>;

struct FiniteMarkovParams {
  std::vector<std::vector<double>> states;
  Matrix P;
  std::vector<double> pi0;

  // Solves for the stationary law and validates.
  static FiniteMarkovParams make(std::vector<std::vector<double>> states, Matrix P);
  static FiniteMarkovParams symmetric_two_state(double stay, double low = -1.0,
                                                double high = 1.0);

  std::size_t size() const { return states.size(); }
  std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }
  void validate() const;
  double max_norm() const;
};

std::vector<double> stationary_distribution(const Matrix& P);
Matrix mat_mul(const Matrix& A, const Matrix& B);
Matrix mat_pow(const Matrix& A, std::size_t n);

struct IidBoundedParams {
  enum class Shape { box, ball };
  int m = 1;
  double half_width = 1.0;
  Shape shape = Shape::box;
};

struct MovingAverageParams {
  int m = 1;
  int window = 4;
  double half_width = 1.0;
  double clamp = 1.0;
};

enum class StreamKind { finite_markov, iid_bounded, bounded_moving_average };

std::string to_string(StreamKind kind);

struct MixingCurve {
  std::vector<double> values;
  bool exact = false;

  double at(std::size_t n) const;
  std::size_t size() const { return values.size(); }
  bool is_valid(double slack = 1e-15) const;
  nlohmann::json to_json() const;
};

struct StreamState {
  Substream rng;
  std::size_t t = 0;
  std::size_t current = 0;
  std::vector<double> window;
  std::size_t head = 0;
};

class DataStream {
 public:
  explicit DataStream(FiniteMarkovParams p);
  explicit DataStream(IidBoundedParams p);
  explicit DataStream(MovingAverageParams p);

  StreamKind kind() const { return kind_; }
  int m() const { return m_; }
  double M() const { return M_; }
  const FiniteMarkovParams* finite() const { return std::get_if<FiniteMarkovParams>(&params_); }
  const IidBoundedParams* iid() const { return std::get_if<IidBoundedParams>(&params_); }
  const MovingAverageParams* moving_average() const {
    return std::get_if<MovingAverageParams>(&params_);
  }

  // State whose first emitted point is drawn from the stationary law.
  StreamState initial_state(std::uint64_t seed) const;
  void advance(StreamState& state, std::span<double> out) const;
  void sample_stationary(Substream& rng, std::span<double> out) const;

  std::pair<DataPoint, StreamState> next(StreamState state) const;

  MixingCurve mixing_curve(std::size_t n_max) const;
  double stationary_mean(std::size_t coord = 0) const;
  double stationary_variance(std::size_t coord = 0) const;
  // Lag autocorrelations of one coordinate, index 0 is 1.
  std::vector<double> autocorrelation(std::size_t max_lag, std::size_t coord = 0) const;

  nlohmann::json to_json() const;

 private:
  void draw_innovation(Substream& rng, std::span<double> out) const;
  void emit_moving_average(const StreamState& state, std::span<double> out) const;

  StreamKind kind_;
  int m_;
  double M_;
  std::variant<FiniteMarkovParams, IidBoundedParams, MovingAverageParams> params_;
};

std::pair<DataPoint, StreamState> stream_next(const DataStream& stream, StreamState state);

double exact_alpha_finite(const FiniteMarkovParams& params, std::size_t n);

struct PartitionSpec {
  std::size_t coord = 0;
  std::vector<double> cuts;

  std::size_t cells() const { return cuts.size() + 1; }
  std::size_t cell_of(double x) const;
};

PartitionSpec quantile_partition(std::span<const double> trace, std::size_t k,
                                 std::size_t coord = 0, std::size_t cells = 8);

double empirical_alpha_partition(std::span<const double> trace, std::size_t k,
                                 const PartitionSpec& partition, std::size_t n);

struct SummabilityReport {
  double eps = 0.0;
  double partial_sum = 0.0;
  std::optional<std::size_t> converged_at;
  bool converged = false;
};

SummabilityReport summability(const MixingCurve& curve, double eps, double tail_tol = 1e-10);

struct FrozenTrajectory {
  int m = 1;
  double M = 0.0;
  std::vector<double> data;

  std::size_t length() const { return m > 0 ? data.size() / static_cast<std::size_t>(m) : 0; }
  std::span<const double> at(std::size_t t) const {
    return {data.data() + t * static_cast<std::size_t>(m), static_cast<std::size_t>(m)};
  }
};

FrozenTrajectory freeze(const DataStream& stream, std::size_t length, std::uint64_t seed);
FrozenTrajectory shift_trajectory(const FrozenTrajectory& traj, std::size_t m);

void write_trajectory(const FrozenTrajectory& traj, const std::filesystem::path& path);
FrozenTrajectory read_trajectory(const std::filesystem::path& path);

}  // namespace lmx
