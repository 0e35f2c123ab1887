#include "langevinmix/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>

#include "langevinmix/ensemble.hpp"
#include "langevinmix/stats.hpp"
#include "langevinmix/theory.hpp"

namespace lmx {

namespace {

constexpr std::size_t kMaxRejections = 1000000;
constexpr std::uint64_t kEnvTag = 1;
constexpr std::uint64_t kEpsTag = 2;

void check_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw EngineError("chain produced a non-finite state");
}

void uniform_ball(Substream& sub, double R, std::span<double> out) {
  double len = 0.0;
  do {
    for (auto& x : out) x = sub.normal();
    len = norm(out);
  } while (len == 0.0);
  const double rad = R * std::pow(sub.uniform(), 1.0 / static_cast<double>(out.size()));
  for (auto& x : out) x *= rad / len;
}

}  // namespace

ChainConfig ChainConfig::make(const ModelSpec& model, double lambda, ParamVector theta0,
                              std::size_t horizon, std::uint64_t seed, bool allow_out_of_theory) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw EngineError("step size must be positive");
  if (theta0.size() != static_cast<std::size_t>(model.d()))
    throw EngineError("theta0 dimension differs from the model");
  check_finite(theta0.view());
  ChainConfig cfg;
  cfg.lambda = lambda;
  cfg.beta = model.beta();
  cfg.theta0 = std::move(theta0);
  cfg.horizon = horizon;
  cfg.seed = seed;
  if (lambda > model.max_step()) {
    if (!allow_out_of_theory)
      throw EngineError("step size " + std::to_string(lambda) +
                        " violates the convergence hypothesis 0 < lambda <= Delta/K^2 = " +
                        std::to_string(model.max_step()));
    cfg.out_of_theory = true;
  }
  return cfg;
}

SplitKernelParams SplitKernelParams::from_model(const ModelSpec& model, double lambda, double R) {
  const auto mc = minorization_constants(model, lambda, R);
  SplitKernelParams p;
  p.d = model.d();
  p.R = R;
  p.alpha_tilde = mc.alpha_tilde;
  p.log_alpha_tilde = mc.log_alpha_tilde;
  p.log_density = mc.log_alpha_tilde - mc.log_volume;
  if (!(p.alpha_tilde > 0.0 && p.alpha_tilde < 1.0))
    throw EngineError("regeneration mass must lie in (0,1); choose a smaller radius");
  return p;
}

nlohmann::json SplitKernelParams::to_json() const {
  return {{"R", R},
          {"alpha_tilde", alpha_tilde},
          {"log_alpha_tilde", log_alpha_tilde},
          {"log_density", log_density},
          {"nu_R", "uniform on the R-ball"}};
}

ParamVector ChainRun::final_state() const {
  const auto t = theta(states() - 1);
  return ParamVector(std::vector<double>(t.begin(), t.end()));
}

std::vector<double> ChainRun::coordinate(std::size_t k) const {
  std::vector<double> out(states());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = thetas[i * d + k];
  return out;
}

void step_plain(const ModelSpec& model, double lambda, double beta, std::span<const double> theta,
                std::span<const double> y, std::span<const double> xi, std::span<double> out) {
  // out may alias theta, so H is evaluated into out first and combined coordinatewise.
  const double sigma = std::sqrt(2.0 * lambda / beta);
  double hbuf[16];
  std::vector<double> hvec;
  std::span<double> h;
  if (theta.size() <= 16) {
    h = std::span<double>(hbuf, theta.size());
  } else {
    hvec.resize(theta.size());
    h = hvec;
  }
  model.H(theta, y, h);
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - lambda * h[i] + sigma * xi[i];
}

ParamVector step_plain(const ModelSpec& model, double lambda, double beta,
                       const ParamVector& theta, const DataPoint& y, const ParamVector& xi) {
  if (!(lambda > 0.0) || !(beta > 0.0)) throw EngineError("step needs lambda > 0 and beta > 0");
  if (xi.size() != theta.size()) throw EngineError("noise dimension differs from theta");
  evaluate_H(model, theta, y);
  ParamVector out(theta.size());
  step_plain(model, lambda, beta, theta.view(), y.view(), xi.view(), out.view());
  check_finite(out.view());
  return out;
}

bool step_split(const ModelSpec& model, double lambda, double beta,
                const SplitKernelParams& split, std::span<const double> theta,
                std::span<const double> y, double eps, Substream& sub, std::span<double> out) {
  const std::size_t d = theta.size();
  const bool in_ball = norm(theta) <= split.R;
  if (in_ball && eps <= split.alpha_tilde) {
    uniform_ball(sub, split.R, out);
    return true;
  }
  const double sigma2 = 2.0 * lambda / beta;
  const double sigma = std::sqrt(sigma2);
  double mu_buf[16];
  std::vector<double> mu_vec;
  std::span<double> mu;
  if (d <= 16) {
    mu = std::span<double>(mu_buf, d);
  } else {
    mu_vec.resize(d);
    mu = mu_vec;
  }
  model.H(theta, y, mu);
  for (std::size_t i = 0; i < d; ++i) mu[i] = theta[i] - lambda * mu[i];
  if (!in_ball) {
    for (std::size_t i = 0; i < d; ++i) out[i] = mu[i] + sigma * sub.normal();
    return false;
  }
  // Residual (Q - alpha nu)/(1 - alpha) by rejection from Q.
  const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * sigma2);
  for (std::size_t it = 0; it < kMaxRejections; ++it) {
    double z2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double z = sub.normal();
      z2 += z * z;
      out[i] = mu[i] + sigma * z;
    }
    if (norm(out) > split.R) return false;
    const double log_q = log_norm - 0.5 * z2;
    const double accept = -std::expm1(split.log_density - log_q);
    if (sub.uniform() < accept) return false;
  }
  throw EngineError("residual sampler exceeded 1e6 rejections; split parameters inconsistent");
}

std::pair<ParamVector, bool> step_split(const ModelSpec& model, double lambda,
                                        const SplitKernelParams& split, const ParamVector& theta,
                                        const DataPoint& y, double eps, Substream& sub,
                                        double beta) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw EngineError("eps must lie in [0,1]");
  evaluate_H(model, theta, y);
  ParamVector out(theta.size());
  const bool regen = step_split(model, lambda, beta, split, theta.view(), y.view(), eps, sub, out.view());
  check_finite(out.view());
  return {std::move(out), regen};
}

bool keyed_step(const ModelSpec& model, const KernelSetup& setup, std::span<const double> theta,
                std::span<const double> y, std::uint64_t eps_key, std::span<double> out,
                std::span<double> scratch) {
  Substream sub(eps_key);
  if (setup.split)
    return step_split(model, setup.lambda, setup.beta, *setup.split, theta, y,
                      key_uniform(eps_key), sub, out);
  for (auto& x : scratch) x = sub.normal();
  step_plain(model, setup.lambda, setup.beta, theta, y, scratch, out);
  return false;
}

std::uint64_t eps_root(std::uint64_t seed) { return derive_key(seed, kEpsTag); }
std::uint64_t env_seed(std::uint64_t seed) { return derive_key(seed, kEnvTag); }

std::vector<std::uint64_t> eps_key_range(std::uint64_t root, std::size_t count) {
  std::vector<std::uint64_t> keys(count);
  for (std::size_t t = 0; t < count; ++t) keys[t] = derive_key(root, t);
  return keys;
}

ChainRun run_chain(const ModelSpec& model, const DataStream& stream, const ChainConfig& cfg,
                   StepMode mode, const std::optional<SplitKernelParams>& split) {
  if (stream.m() != model.m()) throw EngineError("stream and model dimensions differ");
  if (cfg.theta0.size() != static_cast<std::size_t>(model.d()))
    throw EngineError("theta0 dimension differs from the model");
  if (mode == StepMode::split && !split) throw EngineError("split mode needs split-kernel parameters");
  KernelSetup setup{cfg.lambda, cfg.beta, mode == StepMode::split ? split : std::nullopt};
  const std::size_t d = cfg.theta0.size(), m = static_cast<std::size_t>(model.m());
  ChainRun run;
  run.d = d;
  run.out_of_theory = cfg.out_of_theory;
  run.thetas.resize((cfg.horizon + 1) * d);
  std::copy(cfg.theta0.coords.begin(), cfg.theta0.coords.end(), run.thetas.begin());
  run.env_trace.m = model.m();
  run.env_trace.M = stream.M();
  run.env_trace.data.resize(cfg.horizon * m);
  run.eps_keys = eps_key_range(eps_root(cfg.seed), cfg.horizon);
  run.regenerated.assign(cfg.horizon, 0);
  auto state = stream.initial_state(env_seed(cfg.seed));
  std::vector<double> scratch(d);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    auto y = std::span<double>(run.env_trace.data).subspan(t * m, m);
    stream.advance(state, y);
    const auto cur = std::span<const double>(run.thetas).subspan(t * d, d);
    auto nxt = std::span<double>(run.thetas).subspan((t + 1) * d, d);
    run.regenerated[t] = keyed_step(model, setup, cur, y, run.eps_keys[t], nxt, scratch);
    check_finite(nxt);
  }
  return run;
}

ChainRun quenched_run(const ModelSpec& model, const KernelSetup& setup,
                      const FrozenTrajectory& frozen, std::size_t start_time,
                      const ParamVector& theta_start, std::size_t end_time,
                      std::span<const std::uint64_t> eps_keys) {
  if (end_time < start_time) throw EngineError("end_time precedes start_time");
  if (end_time > frozen.length()) throw EngineError("frozen trajectory does not cover the range");
  if (end_time > eps_keys.size()) throw EngineError("eps keys do not cover the range");
  if (frozen.m != model.m()) throw EngineError("frozen trajectory dimension differs from the model");
  if (theta_start.size() != static_cast<std::size_t>(model.d()))
    throw EngineError("theta dimension differs from the model");
  const std::size_t d = theta_start.size(), steps = end_time - start_time;
  ChainRun run;
  run.d = d;
  run.start_time = start_time;
  run.thetas.resize((steps + 1) * d);
  std::copy(theta_start.coords.begin(), theta_start.coords.end(), run.thetas.begin());
  run.env_trace.m = frozen.m;
  run.env_trace.M = frozen.M;
  run.env_trace.data.assign(frozen.data.begin() + static_cast<std::ptrdiff_t>(start_time * frozen.m),
                            frozen.data.begin() + static_cast<std::ptrdiff_t>(end_time * frozen.m));
  run.eps_keys.assign(eps_keys.begin() + static_cast<std::ptrdiff_t>(start_time),
                      eps_keys.begin() + static_cast<std::ptrdiff_t>(end_time));
  run.regenerated.assign(steps, 0);
  std::vector<double> scratch(d);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto cur = std::span<const double>(run.thetas).subspan(i * d, d);
    auto nxt = std::span<double>(run.thetas).subspan((i + 1) * d, d);
    run.regenerated[i] =
        keyed_step(model, setup, cur, frozen.at(start_time + i), eps_keys[start_time + i], nxt, scratch);
    check_finite(nxt);
  }
  return run;
}

CoupledRun coupled_run(const ModelSpec& model, const KernelSetup& setup,
                       const FrozenTrajectory& frozen, const ParamVector& theta1,
                       const ParamVector& theta2, std::size_t horizon,
                       std::span<const std::uint64_t> eps_keys) {
  CoupledRun out;
  out.runs[0] = quenched_run(model, setup, frozen, 0, theta1, horizon, eps_keys);
  out.runs[1] = quenched_run(model, setup, frozen, 0, theta2, horizon, eps_keys);
  const double R = setup.split ? setup.split->R : 0.0;
  for (std::size_t t = 0; t <= horizon; ++t) {
    const auto a = out.runs[0].theta(t), b = out.runs[1].theta(t);
    const bool equal = std::equal(a.begin(), a.end(), b.begin());
    if (equal && !out.first_equal) out.first_equal = t;
    const bool joint = t == 0 ? equal : out.runs[0].regenerated[t - 1] && out.runs[1].regenerated[t - 1];
    if (!out.tau && joint) out.tau = t;
    if (out.tau) {
      if (!equal) out.absorbing = false;
      continue;
    }
    if (setup.split && norm(a) <= R && norm(b) <= R) ++out.small_set_visits;
  }
  return out;
}

nlohmann::json CouplingCurve::to_json() const {
  return {{"horizons", horizons},
          {"no_coupling", no_coupling},
          {"ci_lo", ci_lo},
          {"ci_hi", ci_hi},
          {"replicas", replicas},
          {"confidence", confidence},
          {"mean_small_set_visits", mean_small_set_visits},
          {"absorbing_violations", absorbing_violations},
          {"early_equalities", early_equalities}};
}

CouplingCurve annealed_coupling_curve(const ModelSpec& model, const DataStream& stream,
                                      const KernelSetup& setup, const ParamVector& theta1,
                                      const Theta2Law& theta2_law,
                                      const std::vector<std::size_t>& horizons,
                                      std::size_t replicas, std::uint64_t seed, Exec exec,
                                      double confidence) {
  if (replicas < 100) throw EngineError("annealed coupling curve needs at least 100 replicas");
  if (horizons.empty()) throw EngineError("no horizons requested");
  const std::size_t max_h = *std::max_element(horizons.begin(), horizons.end());
  const auto samples =
      coupling_samples(model, stream, setup, theta1, theta2_law, max_h, replicas, seed, exec);
  CouplingCurve curve;
  curve.horizons = horizons;
  curve.replicas = replicas;
  curve.confidence = confidence;
  NeumaierSum visits;
  for (const auto& s : samples) {
    visits.add(static_cast<double>(s.small_set_visits));
    if (!s.absorbing) ++curve.absorbing_violations;
    if (s.first_equal && (!s.tau || *s.first_equal < *s.tau)) ++curve.early_equalities;
  }
  curve.mean_small_set_visits = visits.sum() / static_cast<double>(replicas);
  for (std::size_t n : horizons) {
    std::size_t uncoupled = 0;
    for (const auto& s : samples)
      if (!s.tau || *s.tau > n) ++uncoupled;
    const auto ci = wilson_interval(uncoupled, replicas, 2.0 * confidence - 1.0);
    curve.no_coupling.push_back(static_cast<double>(uncoupled) / static_cast<double>(replicas));
    curve.ci_lo.push_back(ci.lo);
    curve.ci_hi.push_back(ci.hi);
  }
  return curve;
}

void write_chain_csv(const ChainRun& run, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw EngineError("cannot open " + path.string());
  os << "t";
  for (std::size_t k = 0; k < run.d; ++k) os << ",theta_" << (k + 1);
  os << ",regenerated\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < run.states(); ++i) {
    os << run.start_time + i;
    for (double x : run.theta(i)) os << ',' << x;
    os << ',' << (i > 0 && run.regenerated[i - 1] ? 1 : 0) << '\n';
  }
}

}  // namespace lmx
