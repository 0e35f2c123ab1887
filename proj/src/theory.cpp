#include "langevinmix/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "langevinmix/random.hpp"

namespace lmx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_exp(double x) { return x > 709.0 ? kInf : std::exp(x); }

// log(V0 + k * C) with C given as log_C
double log_v_plus(double V0, double log_k, double log_C) {
  return log_add(std::log(V0), log_k + log_C);
}

}  // namespace

double log_add(double x, double y) {
  if (x == -kInf) return y;
  if (y == -kInf) return x;
  const double m = std::max(x, y);
  return m + std::log1p(std::exp(std::min(x, y) - m));
}

DriftConstants drift_constants(const ModelSpec& model, double lambda) {
  const double delta = model.delta(), K = model.K(), b = model.b(), M = model.M();
  const double beta = model.beta();
  if (!(lambda > 0.0 && lambda < delta / (K * K)))
    throw TheoryError("drift constants need 0 < lambda < Delta/K^2 = " +
                      std::to_string(delta / (K * K)));
  DriftConstants c;
  c.lambda = lambda;
  c.beta = beta;
  c.rho = 2.0 * K * K * lambda * lambda - 2.0 * delta * lambda + 1.0;
  c.a = (1.0 - c.rho) / (8.0 * lambda);
  c.s = 1.0 - 4.0 * lambda * c.a / beta;
  c.c2 = c.a * c.rho / c.s;
  const double d = model.d();
  c.log_c1 = -0.5 * d * std::log(c.s) +
             2.0 * c.a * (lambda * b + lambda * lambda * K * K * (1.0 + M) * (1.0 + M)) / c.s;
  if (!(c.c2 < c.a)) throw TheoryError("drift construction failed: c2 >= a");
  const double r2 = (1.0 + c.log_c1) / (c.a - c.c2);
  c.r = std::sqrt(std::max(r2, 0.0));
  c.gamma = std::exp(c.log_c1 - (c.a - c.c2) * r2);
  c.log_C = std::max(0.0, c.log_c1 + c.c2 * r2);
  c.C = safe_exp(c.log_C);
  if (!(c.gamma > 0.0 && c.gamma < 1.0)) throw TheoryError("drift construction failed: gamma not in (0,1)");
  return c;
}

double log_ball_volume(int d, double R) {
  const double dd = d;
  return 0.5 * dd * std::log(std::numbers::pi) + dd * std::log(R) - std::lgamma(0.5 * dd + 1.0);
}

MinorizationConstants minorization_constants(const ModelSpec& model, double lambda, double R) {
  if (!(R > 0.0)) throw TheoryError("minorization radius must be positive");
  const double K = model.K(), M = model.M(), d = model.d();
  const double sigma = std::sqrt(2.0 * lambda / model.beta());
  MinorizationConstants c;
  c.R = R;
  c.r_star = ((lambda * K + 2.0) * R + lambda * K * (M + 1.0)) / sigma;
  c.log_m_floor = -d * std::log(sigma) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
                  0.5 * c.r_star * c.r_star;
  c.m_floor = std::exp(c.log_m_floor);
  c.log_volume = log_ball_volume(model.d(), R);
  c.log_alpha_tilde = std::min(std::log(0.999), c.log_m_floor + c.log_volume);
  c.alpha_tilde = std::exp(c.log_alpha_tilde);
  return c;
}

void TheoryConstants::validate() const {
  auto fail = [](const char* what) { throw TheoryError(std::string("constant bundle invariant: ") + what); };
  if (!(rho > 0.0 && rho < 1.0)) fail("0 < rho < 1");
  if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma in (0,1)");
  if (!(log_C >= 0.0)) fail("C >= 1");
  if (!(std::isfinite(log_alpha_tilde) && log_alpha_tilde < 0.0)) fail("0 < alpha_tilde < 1");
  if (!(gamma < gamma1 && gamma1 < gamma2 && gamma2 < gamma3 && gamma3 < 1.0))
    fail("gamma < gamma1 < gamma2 < gamma3 < 1");
  if (!(std::log(2.0) + log_C < std::log(gamma1 - gamma) + 0.5 * a * R * R))
    fail("2C < (gamma1 - gamma) exp(a R^2 / 2)");
  if (!(kappa > 0.0)) fail("kappa > 0");
  if (N < 1 || m_n(N) < 1) fail("m_N >= 1");
}

std::size_t TheoryConstants::m_n(std::size_t n) const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * c_m));
}

double TheoryConstants::log_V(std::span<const double> theta) const {
  double s2 = 0.0;
  for (double x : theta) s2 += x * x;
  return a * s2;
}

nlohmann::json TheoryConstants::to_json() const {
  nlohmann::json j;
  j["lambda"] = lambda;
  j["beta"] = beta;
  j["d"] = d;
  j["rho"] = rho;
  j["a"] = a;
  j["s"] = s;
  j["r"] = r;
  j["gamma"] = gamma;
  j["log_C"] = log_C;
  j["C"] = std::isfinite(C) ? nlohmann::json(C) : nlohmann::json(nullptr);
  j["R"] = R;
  j["r_star"] = r_star;
  j["log_m_floor"] = log_m_floor;
  j["m_floor"] = m_floor;
  j["log_alpha_tilde"] = log_alpha_tilde;
  j["alpha_tilde"] = alpha_tilde;
  j["gamma1"] = gamma1;
  j["gamma2"] = gamma2;
  j["gamma3"] = gamma3;
  j["c_m"] = c_m;
  j["kappa"] = kappa;
  j["N"] = N;
  j["kappa_corrected"] = kappa_corrected;
  return j;
}

TheoryConstants coupling_rate(const ModelSpec& model, double lambda) {
  const auto dc = drift_constants(model, lambda);
  TheoryConstants c;
  c.lambda = lambda;
  c.beta = model.beta();
  c.d = model.d();
  c.rho = dc.rho;
  c.a = dc.a;
  c.s = dc.s;
  c.r = dc.r;
  c.gamma = dc.gamma;
  c.C = dc.C;
  c.log_C = dc.log_C;
  c.gamma1 = c.gamma + (1.0 - c.gamma) / 4.0;
  c.gamma2 = c.gamma + (1.0 - c.gamma) / 2.0;
  c.gamma3 = c.gamma + 3.0 * (1.0 - c.gamma) / 4.0;
  const double lhs = std::log(2.0) + c.log_C;
  const double lg = std::log(c.gamma1 - c.gamma);
  c.R = 1.0;
  while (!(lhs < lg + 0.5 * c.a * c.R * c.R)) c.R *= 2.0;
  const auto mc = minorization_constants(model, lambda, c.R);
  c.r_star = mc.r_star;
  c.m_floor = mc.m_floor;
  c.log_m_floor = mc.log_m_floor;
  c.alpha_tilde = mc.alpha_tilde;
  c.log_alpha_tilde = mc.log_alpha_tilde;
  c.c_m = (std::log(c.gamma3) - std::log(c.gamma2)) / (std::log(2.0) - std::log(c.gamma2 - c.gamma1));
  c.kappa = std::min(-std::log(c.gamma3), c.c_m * (-c.log_alpha_tilde));
  c.kappa_corrected = std::min(-std::log(c.gamma3), c.c_m * (-std::log1p(-c.alpha_tilde)));
  c.N = static_cast<std::size_t>(std::ceil(1.0 / c.c_m));
  while (c.m_n(c.N) < 1) ++c.N;
  while (c.N > 1 && c.m_n(c.N - 1) >= 1) --c.N;
  c.validate();
  return c;
}

double iterated_drift_bound(const TheoryConstants& c, double V0, std::size_t t) {
  return std::pow(c.gamma, static_cast<double>(t)) * V0 + c.C / (1.0 - c.gamma);
}

BoundValue coupling_bound(const TheoryConstants& c, double V1, double V2, std::size_t n) {
  BoundValue out;
  out.in_range = n >= c.N;
  const double log_val = std::log((V1 + V2 + 3.0) / 2.0) - c.kappa * static_cast<double>(n);
  out.value = std::clamp(safe_exp(log_val), 0.0, 1.0);
  return out;
}

BoundValue mixing_transfer_bound(const TheoryConstants& c, double V0, const MixingCurve& alphaY,
                                 std::size_t n) {
  BoundValue out;
  out.in_range = n >= 2 * c.N;
  const double log_pref = log_v_plus(V0 + 1.5, -std::log(2.0 * (1.0 - c.gamma)), c.log_C);
  out.value = alphaY.at(n / 2) + safe_exp(log_pref - 0.5 * c.kappa * static_cast<double>(n));
  return out;
}

namespace {

double log_moment_bound(const TheoryConstants& c, const GrowthProfile& profile, double V0,
                        double p) {
  if (!(p >= 1.0)) throw TheoryError("moment bound needs p >= 1");
  const double log_inner = log_v_plus(V0, -std::log(1.0 - c.gamma), c.log_C);
  const double log_term = (std::lgamma(profile.r * p / 2.0 + 1.0) + log_inner) / p;
  return std::log(profile.c_phi) + log_add(0.0, log_term);
}

}  // namespace

double moment_bound(const ModelSpec&, const TheoryConstants& c, const GrowthProfile& profile,
                    double V0, double p) {
  return safe_exp(log_moment_bound(c, profile, V0, p));
}

double ibragimov_bound(double c, double alpha, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw TheoryError("ibragimov bound needs 0 < eps < 1");
  if (!(alpha >= 0.0 && alpha <= 0.25)) throw TheoryError("ibragimov bound needs 0 <= alpha <= 1/4");
  if (!(c >= 0.0)) throw TheoryError("ibragimov bound needs c >= 0");
  if (alpha == 0.0) return 0.0;
  return (4.0 + 5.0 * c) * std::pow(alpha, 1.0 - eps);
}

BoundValue autocov_bound(const TheoryConstants& c, const GrowthProfile& profile,
                         const MixingCurve& alphaY, double eps, std::size_t l, double V0) {
  if (!(eps > 0.0 && eps < 1.0)) throw TheoryError("autocovariance bound needs 0 < eps < 1");
  BoundValue out;
  out.in_range = l >= 2 * c.N;
  const double pt = 2.0 / eps + 1.0;
  const double log_ct = pt * log_moment_bound(c, profile, V0, pt);
  const double log_first = log_add(std::log(4.0), std::log(5.0) + log_ct);
  const double log_pref = log_v_plus(V0 + 1.5, -std::log(2.0 * (1.0 - c.gamma)), c.log_C);
  const double log_second = std::log(2.0) + log_moment_bound(c, profile, V0, 2.0) +
                            log_moment_bound(c, profile, V0, 4.0) + 0.25 * log_pref;
  const double log_lambda = std::max(log_first, log_second);
  const std::size_t h = l / 2;
  const double decay = std::pow(alphaY.at(h), 1.0 - eps) +
                       std::exp(-c.kappa * static_cast<double>(h) / 4.0);
  out.value = safe_exp(log_lambda + std::log(decay));
  return out;
}

std::vector<ParamVector> radial_grid(int d, std::size_t points, double max_norm) {
  std::vector<ParamVector> grid;
  grid.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    ParamVector p(static_cast<std::size_t>(d), 0.0);
    p[0] = points > 1 ? max_norm * static_cast<double>(i) / static_cast<double>(points - 1) : 0.0;
    grid.push_back(std::move(p));
  }
  return grid;
}

nlohmann::json DriftReport::to_json() const {
  nlohmann::json j = summary.to_json();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : points)
    rows.push_back({{"theta_norm", p.theta_norm},
                    {"y", p.y},
                    {"log_mc", p.log_mc},
                    {"log_mc_lower", std::isfinite(p.log_mc_lower) ? nlohmann::json(p.log_mc_lower)
                                                                   : nlohmann::json(nullptr)},
                    {"log_closed", p.log_closed},
                    {"log_rhs", p.log_rhs},
                    {"ok", p.ok}});
  j["points"] = rows;
  return j;
}

DriftReport verify_drift(const ModelSpec& model, const DataStream& stream,
                         const TheoryConstants& constants, const std::vector<ParamVector>& theta_grid,
                         std::size_t n_mc, std::uint64_t seed, std::size_t n_y) {
  if (n_mc < 2 || n_y < 1) throw TheoryError("verify_drift needs n_mc >= 2 and n_y >= 1");
  if (stream.m() != model.m()) throw TheoryError("stream and model dimensions differ");
  const auto d = static_cast<std::size_t>(model.d());
  for (const auto& t : theta_grid)
    if (t.size() != d) throw TheoryError("grid point has wrong dimension");
  const double lambda = constants.lambda, a = constants.a;
  const double sigma = std::sqrt(2.0 * lambda / model.beta());
  const double s = 1.0 - 2.0 * a * sigma * sigma;
  const std::size_t cells = theta_grid.size() * n_y;
  std::vector<DriftPoint> pts(cells);
  const auto n_cells = static_cast<std::int64_t>(cells);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t cell = 0; cell < n_cells; ++cell) {
    const auto& theta = theta_grid[static_cast<std::size_t>(cell) / n_y];
    Substream rng(derive_key(seed, static_cast<std::uint64_t>(cell)));
    std::vector<double> y(static_cast<std::size_t>(model.m())), h(d), mu(d), x(d);
    stream.sample_stationary(rng, y);
    model.H(theta.view(), y, h);
    for (std::size_t k = 0; k < d; ++k) mu[k] = theta[k] - lambda * h[k];
    std::vector<double> logs(n_mc);
    double lmax = -kInf;
    for (std::size_t j = 0; j < n_mc; ++j) {
      double s2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = mu[k] + sigma * rng.normal();
        s2 += x[k] * x[k];
      }
      logs[j] = a * s2;
      lmax = std::max(lmax, logs[j]);
    }
    double sum = 0.0, sum2 = 0.0;
    for (double l : logs) {
      const double v = std::exp(l - lmax);
      sum += v;
      sum2 += v * v;
    }
    const double n = static_cast<double>(n_mc);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum2 / n - mean * mean) * n / (n - 1.0));
    const double se = std::sqrt(var / n);
    DriftPoint& p = pts[static_cast<std::size_t>(cell)];
    p.theta_norm = norm(theta.view());
    p.y = y;
    p.log_mc = lmax + std::log(mean);
    p.log_mc_lower = mean - 3.0 * se > 0.0 ? lmax + std::log(mean - 3.0 * se) : -kInf;
    double mu2 = 0.0;
    for (double v : mu) mu2 += v * v;
    // Exact Gaussian expectation; infinite once 1 - 2 a sigma^2 <= 0.
    p.log_closed = s > 0.0 ? -0.5 * static_cast<double>(d) * std::log(s) + a * mu2 / s : kInf;
    p.log_rhs = log_add(std::log(constants.gamma) + constants.log_V(theta.view()), constants.log_C);
    // The MC estimate is heavy-tailed when a is large, so the closed form is checked as well.
    p.ok = p.log_mc_lower <= p.log_rhs && p.log_closed <= p.log_rhs + 1e-12 * std::max(1.0, std::abs(p.log_rhs));
  }
  DriftReport rep;
  rep.points = std::move(pts);
  rep.summary.check = "drift";
  rep.summary.samples = cells * n_mc;
  rep.summary.worst_margin = kInf;
  for (std::size_t i = 0; i < rep.points.size(); ++i) {
    const auto& p = rep.points[i];
    const double margin = p.log_rhs - std::max(p.log_mc_lower, p.log_closed);
    if (!p.ok) {
      ++rep.summary.violations;
      if (rep.summary.witness_theta.empty()) {
        rep.summary.witness_theta = theta_grid[i / n_y].coords;
        rep.summary.witness_y = p.y;
      }
    }
    rep.summary.worst_margin = std::min(rep.summary.worst_margin, margin);
  }
  rep.summary.passed = rep.summary.violations == 0;
  rep.summary.message = "margins are log(gamma V + C) - max(log(MC mean - 3 SE), log closed form)";
  return rep;
}

}  // namespace lmx
