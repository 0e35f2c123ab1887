#include "langevinmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "langevinmix/environment.hpp"
#include "langevinmix/random.hpp"
#include "langevinmix/stats.hpp"

namespace lmx {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

class LinearUpdate final : public UpdateFunction {
 public:
  void apply(std::span<const double> theta, std::span<const double> y,
             std::span<double> out) const override {
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - y[i];
  }
};

// y = (q, z_1..z_d)
class LogisticUpdate final : public UpdateFunction {
 public:
  explicit LogisticUpdate(double c) : c_(c) {}
  void apply(std::span<const double> theta, std::span<const double> y,
             std::span<double> out) const override {
    const double q = y[0];
    const auto z = y.subspan(1);
    const double resid = q - sigmoid(dot(theta, z));
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = -resid * z[i] + 2.0 * c_ * theta[i];
  }

 private:
  double c_;
};

void check_dims(const ModelSpec& spec, std::size_t d, std::size_t m) {
  if (d != static_cast<std::size_t>(spec.d()))
    throw ModelError("theta has dimension " + std::to_string(d) + ", model expects " +
                     std::to_string(spec.d()));
  if (m != static_cast<std::size_t>(spec.m()))
    throw ModelError("y has dimension " + std::to_string(m) + ", model expects " +
                     std::to_string(spec.m()));
}

// Radical inverse in the given base.
double halton(std::size_t i, unsigned base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

constexpr unsigned kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

}  // namespace

ModelSpec::ModelSpec(std::string name, int d, int m, CertifiedConstants constants,
                     std::shared_ptr<const UpdateFunction> H, double beta)
    : name_(std::move(name)), d_(d), m_(m), c_(constants), H_(std::move(H)), beta_(beta) {
  validate();
}

void ModelSpec::validate() const {
  if (d_ < 1 || m_ < 1) throw ModelError("model dimensions must be positive");
  if (!H_) throw ModelError("model has no updating function");
  if (!positive_finite(c_.delta) || !positive_finite(c_.b) || !positive_finite(c_.K) ||
      !positive_finite(c_.M) || !positive_finite(beta_))
    throw ModelError("Delta, b, K, M and beta must be finite and positive");
  if (!(c_.K > c_.delta / std::sqrt(2.0)))
    throw ModelError("linear growth constant K must exceed Delta/sqrt(2)");
}

ModelSpec ModelSpec::with_constants(CertifiedConstants c) const {
  ModelSpec out = *this;
  out.c_ = c;
  out.validate();
  return out;
}

ModelSpec ModelSpec::with_beta(double beta) const {
  ModelSpec out = *this;
  out.beta_ = beta;
  out.validate();
  return out;
}

ModelSpec ModelSpec::with_potential(Potential U, MeanField h) const {
  ModelSpec out = *this;
  out.U_ = std::move(U);
  out.h_ = std::move(h);
  return out;
}

ModelSpec ModelSpec::with_param(const std::string& key, double value) const {
  ModelSpec out = *this;
  out.params_[key] = value;
  return out;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  j["name"] = name_;
  j["d"] = d_;
  j["m"] = m_;
  j["delta"] = c_.delta;
  j["b"] = c_.b;
  j["K"] = c_.K;
  j["M"] = c_.M;
  j["beta"] = beta_;
  j["params"] = params_;
  return j;
}

ParamVector evaluate_H(const ModelSpec& spec, const ParamVector& theta, const DataPoint& y) {
  check_dims(spec, theta.size(), y.size());
  ParamVector out(theta.size());
  spec.H(theta.view(), y.view(), out.view());
  for (double x : out.coords)
    if (!std::isfinite(x)) throw ModelError("updating function returned a non-finite value");
  return out;
}

ModelSpec make_linear_model(int d, double M) {
  if (d < 1 || !positive_finite(M)) throw ModelError("linear model needs d >= 1 and M > 0");
  ModelSpec spec("linear", d, d, {0.5, 0.5 * M * M, 1.0, M}, std::make_shared<LinearUpdate>());
  return spec
      .with_potential(
          [](std::span<const double> t) { return 0.5 * dot(t, t); },
          [](std::span<const double> t, std::span<double> out) {
            std::copy(t.begin(), t.end(), out.begin());
          })
      .with_param("M", M);
}

ModelSpec make_logistic_model(int d, double c, double M_z) {
  if (d < 1 || !positive_finite(c) || !positive_finite(M_z))
    throw ModelError("logistic model needs d >= 1, c > 0 and M_z > 0");
  const CertifiedConstants k{c, M_z * M_z / (4.0 * c), std::max(1.0, 2.0 * c),
                             std::sqrt(1.0 + M_z * M_z)};
  return ModelSpec("logistic", d, d + 1, k, std::make_shared<LogisticUpdate>(c))
      .with_param("c", c)
      .with_param("M_z", M_z);
}

bool GrowthProfile::bound_holds(std::span<const double> theta) const {
  const double lhs = std::abs(phi(theta));
  const double rhs = c_phi * (1.0 + std::pow(norm(theta), r));
  return lhs <= rhs * (1.0 + 1e-12);
}

GrowthProfile coordinate_profile(std::size_t index) {
  return {"coordinate", 1.0, 1.0, [index](std::span<const double> t) { return t[index]; }};
}

GrowthProfile squared_norm_profile() {
  return {"squared_norm", 1.0, 2.0, [](std::span<const double> t) { return dot(t, t); }};
}

GrowthProfile cubic_coordinate_profile(std::size_t index) {
  return {"cubic", 1.0, 3.0, [index](std::span<const double> t) {
            return t[index] * t[index] * t[index];
          }};
}

std::vector<GrowthProfile> builtin_profiles() {
  return {coordinate_profile(), squared_norm_profile(), cubic_coordinate_profile()};
}

GrowthProfile profile_by_name(const std::string& name) {
  if (name == "coordinate" || name == "identity") return coordinate_profile();
  if (name == "squared_norm") return squared_norm_profile();
  if (name == "cubic") return cubic_coordinate_profile();
  throw ModelError("unknown test function '" + name + "'");
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json j;
  j["check"] = check;
  j["passed"] = passed;
  j["samples"] = samples;
  j["violations"] = violations;
  j["worst_margin"] = worst_margin;
  j["tolerance"] = tolerance;
  if (!witness_theta.empty()) j["witness_theta"] = witness_theta;
  if (!witness_y.empty()) j["witness_y"] = witness_y;
  if (!message.empty()) j["message"] = message;
  return j;
}

std::vector<ParamVector> ball_grid(int d, std::size_t n, double radius) {
  if (d < 1 || static_cast<std::size_t>(d) + 1 > std::size(kPrimes))
    throw ModelError("ball_grid supports 1 <= d <= 24");
  std::vector<ParamVector> pts;
  pts.reserve(n);
  if (n == 0) return pts;
  pts.emplace_back(static_cast<std::size_t>(d), 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    ParamVector p(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) p[k] = 2.0 * halton(i, kPrimes[k]) - 1.0;
    double len = norm(p.view());
    if (len == 0.0) {
      p[0] = 1.0;
      len = 1.0;
    }
    const double rad = radius * std::pow(halton(i, kPrimes[d]), 1.0 / d);
    // Halton's first points are coarse; push every 16th point to the boundary.
    const double scale = (i % 16 == 0 ? radius : rad) / len;
    for (auto& x : p.coords) x *= scale;
    pts.push_back(std::move(p));
  }
  return pts;
}

namespace {

struct Sample {
  double margin;
  double tol;
};

template <class MarginFn>
ValidationReport run_pairwise_check(const std::string& name, const ModelSpec& spec,
                                    const DataStream& stream, std::size_t n_samples,
                                    double grid_radius, std::uint64_t seed, MarginFn margin_fn) {
  if (n_samples < 1) throw ModelError(name + ": n_samples must be >= 1");
  if (stream.m() != spec.m()) throw ModelError(name + ": stream and model dimensions differ");
  const auto grid = ball_grid(spec.d(), n_samples, grid_radius);
  std::vector<Sample> out(n_samples);
  std::vector<std::vector<double>> ys(n_samples);
  const auto n = static_cast<std::int64_t>(n_samples);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    Substream rng(derive_key(seed, static_cast<std::uint64_t>(i)));
    std::vector<double> y(static_cast<std::size_t>(spec.m()));
    stream.sample_stationary(rng, y);
    std::vector<double> h(static_cast<std::size_t>(spec.d()));
    spec.H(grid[i].view(), y, h);
    out[i] = margin_fn(grid[i].view(), std::span<const double>(y), std::span<const double>(h));
    ys[i] = std::move(y);
  }
  ValidationReport rep;
  rep.check = name;
  rep.samples = n_samples;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  std::size_t worst = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (out[i].margin < -out[i].tol) ++rep.violations;
    if (out[i].margin < rep.worst_margin) {
      rep.worst_margin = out[i].margin;
      rep.tolerance = out[i].tol;
      worst = i;
    }
  }
  rep.passed = rep.violations == 0;
  if (!rep.passed) {
    rep.witness_theta = grid[worst].coords;
    rep.witness_y = ys[worst];
    rep.message = std::to_string(rep.violations) + " violating (theta, y) pairs";
  }
  return rep;
}

}  // namespace

ValidationReport check_dissipativity(const ModelSpec& spec, const DataStream& stream,
                                     std::size_t n_samples, double grid_radius,
                                     std::uint64_t seed) {
  const double delta = spec.delta(), b = spec.b();
  return run_pairwise_check(
      "dissipativity", spec, stream, n_samples, grid_radius, seed,
      [&](std::span<const double> t, std::span<const double>, std::span<const double> h) {
        const double tt = dot(t, t);
        return Sample{dot(h, t) - delta * tt + b, 1e-9 * (1.0 + delta * tt + b)};
      });
}

ValidationReport check_linear_growth(const ModelSpec& spec, const DataStream& stream,
                                     std::size_t n_samples, double grid_radius,
                                     std::uint64_t seed) {
  const double K = spec.K();
  return run_pairwise_check(
      "linear_growth", spec, stream, n_samples, grid_radius, seed,
      [&](std::span<const double> t, std::span<const double> y, std::span<const double> h) {
        const double rhs = K * (norm(t) + norm(y) + 1.0);
        return Sample{rhs - norm(h), 1e-9 * (1.0 + rhs)};
      });
}

ValidationReport check_gradient_consistency(const ModelSpec& spec, const DataStream& stream,
                                            const std::vector<ParamVector>& theta_grid,
                                            std::size_t n_mc, double fd_step,
                                            std::uint64_t seed, double threshold) {
  if (!spec.has_potential()) throw ModelError("gradient consistency needs a potential U");
  if (n_mc < 1 || !(fd_step > 0.0)) throw ModelError("gradient consistency needs n_mc >= 1, fd_step > 0");
  const auto d = static_cast<std::size_t>(spec.d());
  for (const auto& t : theta_grid)
    if (t.size() != d) throw ModelError("grid point has wrong dimension");
  const auto n = static_cast<std::int64_t>(theta_grid.size());
  std::vector<double> err(theta_grid.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t g = 0; g < n; ++g) {
    const auto& theta = theta_grid[g];
    Substream rng(derive_key(seed, static_cast<std::uint64_t>(g)));
    std::vector<double> y(static_cast<std::size_t>(spec.m())), h(d);
    std::vector<NeumaierSum> acc(d);
    for (std::size_t j = 0; j < n_mc; ++j) {
      stream.sample_stationary(rng, y);
      spec.H(theta.view(), y, h);
      for (std::size_t k = 0; k < d; ++k) acc[k].add(h[k]);
    }
    std::vector<double> diff(d), fd(d), tp = theta.coords, tm = theta.coords;
    for (std::size_t k = 0; k < d; ++k) {
      tp[k] += fd_step;
      tm[k] -= fd_step;
      fd[k] = (spec.U()(tp) - spec.U()(tm)) / (2.0 * fd_step);
      tp[k] = tm[k] = theta[k];
      diff[k] = acc[k].sum() / static_cast<double>(n_mc) - fd[k];
    }
    err[g] = norm(diff) / std::max(norm(fd), 1.0);
  }
  ValidationReport rep;
  rep.check = "gradient_consistency";
  rep.samples = theta_grid.size() * n_mc;
  rep.tolerance = threshold;
  rep.worst_margin = 0.0;
  std::size_t worst = 0;
  for (std::size_t g = 0; g < err.size(); ++g) {
    if (err[g] > threshold) ++rep.violations;
    if (err[g] > rep.worst_margin) {
      rep.worst_margin = err[g];
      worst = g;
    }
  }
  rep.passed = rep.violations == 0;
  rep.message = "max relative error " + std::to_string(rep.worst_margin);
  if (!rep.passed) rep.witness_theta = theta_grid[worst].coords;
  return rep;
}

ValidationReport check_growth_profile(const GrowthProfile& profile,
                                      const std::vector<ParamVector>& grid) {
  ValidationReport rep;
  rep.check = "growth_" + profile.name;
  rep.samples = grid.size();
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& t : grid) {
    const double margin =
        profile.c_phi * (1.0 + std::pow(norm(t.view()), profile.r)) - std::abs(profile(t.view()));
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (!profile.bound_holds(t.view())) {
      ++rep.violations;
      if (rep.witness_theta.empty()) rep.witness_theta = t.coords;
    }
  }
  rep.passed = rep.violations == 0;
  return rep;
}

}  // namespace lmx
