#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "langevinmix/environment.hpp"
#include "langevinmix/model.hpp"
#include "langevinmix/stats.hpp"

namespace lmx {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t n_cells = 100;

  double width() const { return (hi - lo) / static_cast<double>(n_cells); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
  std::size_t cell_of(double x) const;
};

struct GridLaw {
  GridSpec grid;
  std::size_t n_states = 1;
  std::vector<double> weights;  // cell-major, weights[i * n_states + s]
  std::vector<double> contraction_log;
  std::size_t iterations = 0;
  bool converged = false;

  std::vector<double> marginal() const;
  double total_mass() const;
  double mean() const;
  double variance() const;
  // Aggregates cells into histogram bins; bins must tile the grid exactly.
  EmpiricalLaw binned(const BinSpec& bins) const;
};

// Joint (theta-cell, environment-state) transition with Gaussian cell probabilities from
// normal CDF differences; tails fold into the edge cells.
class GridKernel {
 public:
  GridKernel(const ModelSpec& model, const FiniteMarkovParams& env, double lambda, GridSpec grid);
  std::vector<double> apply(const std::vector<double>& weights) const;
  const GridSpec& grid() const { return grid_; }
  std::size_t n_states() const { return env_.size(); }

 private:
  struct Row {
    std::size_t first = 0;
    std::vector<double> probs;
  };
  GridSpec grid_;
  FiniteMarkovParams env_;
  std::vector<Row> rows_;  // rows_[s * n_cells + i]
};

GridLaw grid_stationary_law(const ModelSpec& model, const FiniteMarkovParams& env, double lambda,
                            const GridSpec& grid, std::size_t iters, double tol = 1e-10,
                            double theta_start = 0.0);

GridLaw apply_kernel(const ModelSpec& model, const FiniteMarkovParams& env, double lambda,
                     const GridLaw& law);

void write_grid_law_csv(const GridLaw& law, const std::filesystem::path& path);

struct Ar1Moments {
  double stat_mean = 0.0;
  double stat_var = 0.0;
  double long_run_var = 0.0;
};

// theta' = (1 - lambda) theta + lambda Y + sqrt(2 lambda / beta) xi; env_autocorr[l] is the
// lag-l autocorrelation of Y (index 0 ignored), the series beyond the supplied lags is zero.
Ar1Moments ar1_closed_form(double lambda, double env_mean, double env_var,
                           const std::vector<double>& env_autocorr, double beta = 1.0);

// Exact data-averaged logistic loss and mean field for a finite-state (q, z) environment.
Potential logistic_potential(double c, const FiniteMarkovParams& env);
MeanField finite_mean_field(const ModelSpec& model, const FiniteMarkovParams& env);
ModelSpec attach_logistic_potential(const ModelSpec& model, const FiniteMarkovParams& env);

ParamVector logistic_minimizer(const ModelSpec& model, const FiniteMarkovParams& env, double tol,
                               const ParamVector& start = {});

}  // namespace lmx
