#include "langevinmix/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace lmx {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

std::size_t GridSpec::cell_of(double x) const {
  if (x <= lo) return 0;
  const auto i = static_cast<std::size_t>((x - lo) / width());
  return std::min(i, n_cells - 1);
}

std::vector<double> GridLaw::marginal() const {
  std::vector<double> m(grid.n_cells, 0.0);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    for (std::size_t s = 0; s < n_states; ++s) m[i] += weights[i * n_states + s];
  return m;
}

double GridLaw::total_mass() const { return compensated_sum(weights); }

double GridLaw::mean() const {
  const auto m = marginal();
  NeumaierSum s;
  for (std::size_t i = 0; i < m.size(); ++i) s.add(m[i] * grid.center(i));
  return s.sum();
}

double GridLaw::variance() const {
  const auto m = marginal();
  const double mu = mean();
  NeumaierSum s;
  for (std::size_t i = 0; i < m.size(); ++i) s.add(m[i] * (grid.center(i) - mu) * (grid.center(i) - mu));
  return s.sum();
}

EmpiricalLaw GridLaw::binned(const BinSpec& bins) const {
  if (bins.d != 1) throw OracleError("grid laws are one-dimensional");
  const double h = grid.width();
  const double rel_lo = (bins.lo[0] - grid.lo) / h;
  const double per_bin = (bins.hi[0] - bins.lo[0]) / (static_cast<double>(bins.bins) * h);
  const auto offset = static_cast<std::size_t>(std::llround(rel_lo));
  const auto k = static_cast<std::size_t>(std::llround(per_bin));
  if (std::abs(rel_lo - static_cast<double>(offset)) > 1e-6 || std::abs(per_bin - static_cast<double>(k)) > 1e-6 ||
      k == 0 || rel_lo < -1e-6 || offset + k * bins.bins > grid.n_cells)
    throw OracleError("histogram bins do not tile the oracle grid");
  const auto m = marginal();
  std::vector<double> mass(bins.bins, 0.0);
  double inside = 0.0;
  for (std::size_t b = 0; b < bins.bins; ++b) {
    for (std::size_t j = 0; j < k; ++j) mass[b] += m[offset + b * k + j];
    inside += mass[b];
  }
  return law_from_masses(bins, std::move(mass), std::max(0.0, 1.0 - inside));
}

GridKernel::GridKernel(const ModelSpec& model, const FiniteMarkovParams& env, double lambda,
                       GridSpec grid)
    : grid_(grid), env_(env) {
  if (model.d() != 1) throw OracleError("grid oracle supports d = 1 only");
  if (static_cast<int>(env.dim()) != model.m()) throw OracleError("environment dimension differs from the model");
  if (grid.n_cells < 2 || !(grid.hi > grid.lo)) throw OracleError("bad grid");
  const double sigma = std::sqrt(2.0 * lambda / model.beta());
  const std::size_t n = grid.n_cells;
  const double h = grid.width();
  rows_.resize(env.size() * n);
  for (std::size_t s = 0; s < env.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double theta = grid.center(i);
      double hval = 0.0;
      model.H(std::span<const double>(&theta, 1), env.states[s], std::span<double>(&hval, 1));
      const double mu = theta - lambda * hval;
      // Cells beyond 40 sd carry no representable mass.
      const double lo_x = mu - 40.0 * sigma, hi_x = mu + 40.0 * sigma;
      const std::size_t first = grid.cell_of(lo_x), last = grid.cell_of(hi_x);
      Row& row = rows_[s * n + i];
      row.first = first;
      row.probs.resize(last - first + 1);
      double prev = first == 0 ? 0.0 : normal_cdf((grid.lo + static_cast<double>(first) * h - mu) / sigma);
      double total = 0.0;
      for (std::size_t j = first; j <= last; ++j) {
        const double edge = grid.lo + static_cast<double>(j + 1) * h;
        const double cur = j == n - 1 ? 1.0 : normal_cdf((edge - mu) / sigma);
        row.probs[j - first] = std::max(0.0, cur - prev);
        total += row.probs[j - first];
        prev = cur;
      }
      if (first > 0) row.probs.front() += normal_cdf((grid.lo + static_cast<double>(first) * h - mu) / sigma);
      total = 0.0;
      for (double p : row.probs) total += p;
      for (double& p : row.probs) p /= total;
    }
  }
}

std::vector<double> GridKernel::apply(const std::vector<double>& w) const {
  const std::size_t n = grid_.n_cells, S = env_.size();
  std::vector<double> u(n * S, 0.0), out(n * S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      const double mass = w[i * S + s];
      if (mass == 0.0) continue;
      const Row& row = rows_[s * n + i];
      for (std::size_t k = 0; k < row.probs.size(); ++k) u[(row.first + k) * S + s] += mass * row.probs[k];
    }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t s = 0; s < S; ++s) {
      const double mass = u[j * S + s];
      if (mass == 0.0) continue;
      for (std::size_t t = 0; t < S; ++t) out[j * S + t] += mass * env_.P[s][t];
    }
  return out;
}

GridLaw grid_stationary_law(const ModelSpec& model, const FiniteMarkovParams& env, double lambda,
                            const GridSpec& grid, std::size_t iters, double tol,
                            double theta_start) {
  GridKernel kernel(model, env, lambda, grid);
  GridLaw law;
  law.grid = grid;
  law.n_states = env.size();
  law.weights.assign(grid.n_cells * env.size(), 0.0);
  const std::size_t start = grid.cell_of(theta_start);
  for (std::size_t s = 0; s < env.size(); ++s) law.weights[start * env.size() + s] = env.pi0[s];
  for (std::size_t it = 0; it < iters; ++it) {
    auto next = kernel.apply(law.weights);
    NeumaierSum l1;
    for (std::size_t k = 0; k < next.size(); ++k) l1.add(std::abs(next[k] - law.weights[k]));
    law.weights = std::move(next);
    law.contraction_log.push_back(l1.sum());
    law.iterations = it + 1;
    if (l1.sum() < tol) {
      law.converged = true;
      break;
    }
  }
  if (!law.converged)
    throw OracleError("grid oracle did not converge within " + std::to_string(iters) + " iterations");
  return law;
}

GridLaw apply_kernel(const ModelSpec& model, const FiniteMarkovParams& env, double lambda,
                     const GridLaw& law) {
  GridKernel kernel(model, env, lambda, law.grid);
  GridLaw out = law;
  out.weights = kernel.apply(law.weights);
  return out;
}

void write_grid_law_csv(const GridLaw& law, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw OracleError("cannot open " + path.string());
  os << "cell_center,state,mass\n" << std::setprecision(17);
  for (std::size_t i = 0; i < law.grid.n_cells; ++i)
    for (std::size_t s = 0; s < law.n_states; ++s)
      os << law.grid.center(i) << ',' << s << ',' << law.weights[i * law.n_states + s] << '\n';
}

Ar1Moments ar1_closed_form(double lambda, double env_mean, double env_var,
                           const std::vector<double>& env_autocorr, double beta) {
  if (!(lambda > 0.0 && lambda < 2.0)) throw OracleError("AR(1) closed form needs lambda in (0,2)");
  if (!(env_var >= 0.0)) throw OracleError("environment variance must be nonnegative");
  const double r = 1.0 - lambda;
  const double noise = 2.0 * lambda / beta;
  NeumaierSum weighted, plain;
  weighted.add(env_var);
  plain.add(env_var);
  double rl = 1.0;
  for (std::size_t l = 1; l < env_autocorr.size(); ++l) {
    rl *= r;
    const double c = env_var * env_autocorr[l];
    weighted.add(2.0 * c * rl);
    plain.add(2.0 * c);
  }
  Ar1Moments out;
  out.stat_mean = env_mean;
  out.stat_var = (noise + lambda * lambda * weighted.sum()) / (1.0 - r * r);
  out.long_run_var = (lambda * lambda * plain.sum() + noise) / (lambda * lambda);
  return out;
}

Potential logistic_potential(double c, const FiniteMarkovParams& env) {
  return [c, env](std::span<const double> theta) {
    NeumaierSum s;
    for (std::size_t k = 0; k < env.size(); ++k) {
      const auto& y = env.states[k];
      const double x = dot(theta, std::span<const double>(y).subspan(1));
      const double q = y[0];
      s.add(env.pi0[k] * (q * softplus(-x) + (1.0 - q) * softplus(x)));
    }
    s.add(c * dot(theta, theta));
    return s.sum();
  };
}

MeanField finite_mean_field(const ModelSpec& model, const FiniteMarkovParams& env) {
  return [model, env](std::span<const double> theta, std::span<double> out) {
    std::vector<double> h(theta.size());
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < env.size(); ++k) {
      model.H(theta, env.states[k], h);
      for (std::size_t i = 0; i < theta.size(); ++i) out[i] += env.pi0[k] * h[i];
    }
  };
}

ModelSpec attach_logistic_potential(const ModelSpec& model, const FiniteMarkovParams& env) {
  if (model.name() != "logistic") throw OracleError("logistic potential needs the logistic model");
  if (static_cast<int>(env.dim()) != model.m()) throw OracleError("environment dimension differs from the model");
  return model.with_potential(logistic_potential(model.params().at("c"), env),
                              finite_mean_field(model, env));
}

ParamVector logistic_minimizer(const ModelSpec& model, const FiniteMarkovParams& env, double tol,
                               const ParamVector& start) {
  if (model.name() != "logistic") throw OracleError("logistic minimizer needs the logistic model");
  const double c = model.params().at("c");
  double zmax = 0.0;
  for (const auto& y : env.states) zmax = std::max(zmax, norm(std::span<const double>(y).subspan(1)));
  const double step = 1.0 / (2.0 * c + 0.25 * zmax * zmax);
  const auto d = static_cast<std::size_t>(model.d());
  ParamVector theta = start.size() == d ? start : ParamVector(d, 0.0);
  const auto h = finite_mean_field(model, env);
  std::vector<double> g(d);
  for (std::size_t it = 0; it < 1000000; ++it) {
    h(theta.view(), g);
    if (norm(g) < tol) return theta;
    for (std::size_t i = 0; i < d; ++i) theta[i] -= step * g[i];
  }
  throw OracleError("logistic minimizer did not converge");
}

}  // namespace lmx
