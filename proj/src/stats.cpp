#include "langevinmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>

#include "langevinmix/engine.hpp"

namespace lmx {

double compensated_sum(std::span<const double> xs) {
  NeumaierSum s;
  for (double x : xs) s.add(x);
  return s.sum();
}

double compensated_mean(std::span<const double> xs) {
  if (xs.empty()) throw StatsError("mean of an empty series");
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

double time_average(std::span<const double> thetas, std::size_t d, const GrowthProfile& profile,
                    std::size_t burn_in) {
  if (d == 0 || thetas.size() % d != 0) throw StatsError("bad trajectory layout");
  const std::size_t n = thetas.size() / d;
  if (burn_in >= n) throw StatsError("burn-in leaves no samples");
  NeumaierSum s;
  for (std::size_t t = burn_in; t < n; ++t) s.add(profile(thetas.subspan(t * d, d)));
  return s.sum() / static_cast<double>(n - burn_in);
}

double time_average(const ChainRun& run, const GrowthProfile& profile, std::size_t burn_in) {
  return time_average(run.thetas, run.d, profile, burn_in);
}

SeriesStats autocovariance(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n == 0 || n <= 10 * max_lag) throw StatsError("series shorter than 10 * max_lag");
  SeriesStats st;
  st.n = n;
  st.mean = compensated_mean(series);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = series[i] - st.mean;
  st.autocov.resize(max_lag + 1);
  for (std::size_t l = 0; l <= max_lag; ++l) {
    NeumaierSum s;
    for (std::size_t i = 0; i + l < n; ++i) s.add(c[i] * c[i + l]);
    st.autocov[l] = s.sum() / static_cast<double>(n);
  }
  st.variance = st.autocov[0];
  return st;
}

LrvEstimate long_run_variance_estimate(std::span<const double> series, LrvMethod method,
                                       std::size_t window) {
  const std::size_t n = series.size();
  const double dn = static_cast<double>(n);
  LrvEstimate est;
  if (method == LrvMethod::batch_means) {
    est.window = window > 0 ? window : static_cast<std::size_t>(std::floor(std::sqrt(dn)));
    const std::size_t nb = est.window > 0 ? n / est.window : 0;
    if (est.window == 0 || nb < 2) throw StatsError("too little data for batch means");
    std::vector<double> means(nb);
    for (std::size_t b = 0; b < nb; ++b)
      means[b] = compensated_mean(series.subspan(b * est.window, est.window));
    const double mu = compensated_mean(means);
    NeumaierSum ss;
    for (double m : means) ss.add((m - mu) * (m - mu));
    est.value = static_cast<double>(est.window) * ss.sum() / static_cast<double>(nb - 1);
    return est;
  }
  est.window = window > 0 ? window : static_cast<std::size_t>(std::floor(std::cbrt(dn)));
  const auto st = autocovariance(series, est.window);
  NeumaierSum s;
  s.add(st.autocov[0]);
  for (std::size_t l = 1; l <= est.window; ++l) s.add(2.0 * st.autocov[l]);
  est.value = s.sum();
  if (est.value < 0.0) {
    est.value = 0.0;
    est.floored = true;
  }
  return est;
}

double long_run_variance(std::span<const double> series, LrvMethod method, std::size_t window) {
  return long_run_variance_estimate(series, method, window).value;
}

double DonskerPath::at(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw StatsError("Donsker path is defined on [0,1]");
  const auto k = std::min(n, static_cast<std::size_t>(std::floor(t * static_cast<double>(n))));
  return values[k];
}

double DonskerPath::studentized_at(double t) const {
  if (!(sigma_hat > 0.0)) throw StatsError("studentized path needs sigma_hat > 0");
  return at(t) / sigma_hat;
}

std::vector<std::array<double, 3>> DonskerPath::grid(std::size_t points) const {
  std::vector<std::array<double, 3>> out;
  out.reserve(points + 1);
  for (std::size_t k = 0; k <= points; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(points);
    const double v = at(t);
    out.push_back({t, v, sigma_hat > 0.0 ? v / sigma_hat : 0.0});
  }
  return out;
}

DonskerPath donsker_path(std::span<const double> series, double sigma_hat) {
  if (!(sigma_hat >= 0.0)) throw StatsError("sigma_hat must be nonnegative");
  DonskerPath p;
  p.n = series.size();
  p.sigma_hat = sigma_hat;
  p.values.resize(p.n + 1);
  const double scale = p.n > 0 ? 1.0 / std::sqrt(static_cast<double>(p.n)) : 0.0;
  NeumaierSum s;
  p.values[0] = 0.0;
  for (std::size_t k = 0; k < p.n; ++k) {
    s.add(series[k]);
    p.values[k + 1] = s.sum() * scale;
  }
  return p;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw StatsError("normal quantile needs p in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.3) {
    // Theta-function form converges fast for small x.
    const double f = std::sqrt(2.0 * std::numbers::pi) / x;
    double cdf = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double t = (2.0 * k - 1.0) * std::numbers::pi / x;
      cdf += std::exp(-t * t / 8.0);
    }
    return std::clamp(1.0 - f * cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-18) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

KsResult ks_normality(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 100) throw StatsError("KS test needs at least 100 samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  double dmax = 0.0;
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = normal_cdf(x[i]);
    dmax = std::max({dmax, static_cast<double>(i + 1) / dn - f, f - static_cast<double>(i) / dn});
  }
  KsResult res;
  res.statistic = dmax;
  const double sq = std::sqrt(dn);
  res.p_value = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * dmax);
  return res;
}

BinSpec BinSpec::cube(std::size_t d, double L, std::size_t bins) {
  if (!(L > 0.0) || bins < 1 || d < 1) throw StatsError("bad binning");
  return BinSpec{d, std::vector<double>(d, -L), std::vector<double>(d, L), bins};
}

std::size_t BinSpec::cells() const {
  std::size_t c = 1;
  for (std::size_t k = 0; k < d; ++k) c *= bins;
  return c;
}

EmpiricalLaw empirical_law(std::span<const double> samples, const BinSpec& spec) {
  if (spec.d == 0 || samples.size() % spec.d != 0) throw StatsError("bad sample layout");
  EmpiricalLaw law;
  law.spec = spec;
  law.mass.assign(spec.cells(), 0.0);
  const std::size_t n = samples.size() / spec.d;
  law.total = n;
  std::size_t overflow = 0;
  std::vector<double> counts(spec.cells(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx = 0;
    bool inside = true;
    for (std::size_t k = 0; k < spec.d; ++k) {
      const double x = samples[i * spec.d + k];
      const double u = (x - spec.lo[k]) / (spec.hi[k] - spec.lo[k]);
      if (!(u >= 0.0 && u < 1.0)) {
        inside = false;
        break;
      }
      const auto b = std::min(spec.bins - 1, static_cast<std::size_t>(u * static_cast<double>(spec.bins)));
      idx = idx * spec.bins + b;
    }
    if (inside)
      counts[idx] += 1.0;
    else
      ++overflow;
  }
  const double inv = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) law.mass[c] = counts[c] * inv;
  law.overflow = static_cast<double>(overflow) * inv;
  return law;
}

EmpiricalLaw law_from_masses(const BinSpec& spec, std::vector<double> mass, double overflow) {
  if (mass.size() != spec.cells()) throw StatsError("mass vector does not match the binning");
  EmpiricalLaw law;
  law.spec = spec;
  law.mass = std::move(mass);
  law.overflow = overflow;
  return law;
}

double tv_distance(const EmpiricalLaw& p, const EmpiricalLaw& q) {
  if (!(p.spec == q.spec)) throw StatsError("laws use different binnings");
  NeumaierSum s;
  for (std::size_t i = 0; i < p.mass.size(); ++i) s.add(std::abs(p.mass[i] - q.mass[i]));
  s.add(std::abs(p.overflow - q.overflow));
  return std::clamp(0.5 * s.sum(), 0.0, 1.0);
}

RateFit exp_rate_fit(const std::vector<std::pair<double, double>>& curve) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& [n, v] : curve)
    if (v > 0.0 && std::isfinite(v)) pts.emplace_back(n, std::log(v));
  if (pts.size() < 4) throw StatsError("rate fit needs at least 4 positive points");
  const double k = static_cast<double>(pts.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double mx = sx / k, my = sy / k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw StatsError("rate fit needs distinct abscissae");
  RateFit fit;
  fit.points = pts.size();
  const double slope = sxy / sxx;
  fit.rate = -slope;
  fit.intercept = my - slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

DcpDecomposition dcp_decomposition(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n == 0) throw StatsError("empty series");
  const double dn = static_cast<double>(n);
  NeumaierSum total, squares, cross, prefix;
  for (std::size_t l = 0; l < n; ++l) {
    const double x = series[l];
    cross.add(x * prefix.sum());
    prefix.add(x);
    squares.add(x * x);
    total.add(x);
  }
  DcpDecomposition d;
  const double s = total.sum();
  d.direct = s * s / dn;
  d.variance_term = squares.sum() / dn;
  d.cross_term = 2.0 * cross.sum() / dn;
  return d;
}

Interval wilson_interval(std::size_t successes, std::size_t n, double confidence) {
  if (n == 0) throw StatsError("binomial interval needs n >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw StatsError("confidence must be in (0,1)");
  const double z = normal_quantile(0.5 + 0.5 * confidence);
  const double dn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / dn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * dn)) / (1.0 + z2 / dn);
  const double half = z * std::sqrt(p * (1.0 - p) / dn + z2 / (4.0 * dn * dn)) / (1.0 + z2 / dn);
  // the endpoints are exactly 0 and 1 at the boundary counts
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half),
          successes == n ? 1.0 : std::min(1.0, centre + half)};
}

nlohmann::json to_json(const RateFit& fit) {
  return {{"rate", fit.rate},
          {"intercept", fit.intercept},
          {"r_squared", fit.r_squared},
          {"points", fit.points}};
}

}  // namespace lmx
