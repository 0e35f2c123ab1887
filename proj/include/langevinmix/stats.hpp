#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "langevinmix/model.hpp"

namespace lmx {

struct ChainRun;

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NeumaierSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  void merge(const NeumaierSum& o) {
    add(o.sum_);
    add(o.comp_);
  }
  double sum() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> xs);
double compensated_mean(std::span<const double> xs);

struct SeriesStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> autocov;
};

// Mean of phi over rows burn_in..end of a row-major d-column trajectory.
double time_average(std::span<const double> thetas, std::size_t d, const GrowthProfile& profile,
                    std::size_t burn_in);
double time_average(const ChainRun& run, const GrowthProfile& profile, std::size_t burn_in);

SeriesStats autocovariance(std::span<const double> series, std::size_t max_lag);

enum class LrvMethod { batch_means, truncated_sum };

struct LrvEstimate {
  double value = 0.0;
  std::size_t window = 0;
  bool floored = false;
};

// window = 0 picks floor(n^{1/2}) batches for batch means, floor(n^{1/3}) lags for the
// truncated sum.
LrvEstimate long_run_variance_estimate(std::span<const double> series, LrvMethod method,
                                       std::size_t window = 0);
double long_run_variance(std::span<const double> series, LrvMethod method,
                         std::size_t window = 0);

struct DonskerPath {
  std::size_t n = 0;
  double sigma_hat = 0.0;
  std::vector<double> values;  // S_k / sqrt(n), k = 0..n

  double at(double t) const;
  double studentized_at(double t) const;
  // (t, value, studentized) on k/points, k = 0..points
  std::vector<std::array<double, 3>> grid(std::size_t points = 100) const;
};

DonskerPath donsker_path(std::span<const double> series, double sigma_hat);

double normal_cdf(double x);
double normal_quantile(double p);
double kolmogorov_sf(double x);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

KsResult ks_normality(std::span<const double> samples);

struct BinSpec {
  std::size_t d = 1;
  std::vector<double> lo;
  std::vector<double> hi;
  std::size_t bins = 200;

  static BinSpec cube(std::size_t d, double L, std::size_t bins);
  std::size_t cells() const;
  bool operator==(const BinSpec&) const = default;
};

struct EmpiricalLaw {
  BinSpec spec;
  std::vector<double> mass;
  double overflow = 0.0;
  std::size_t total = 0;
};

EmpiricalLaw empirical_law(std::span<const double> samples, const BinSpec& spec);
EmpiricalLaw law_from_masses(const BinSpec& spec, std::vector<double> mass, double overflow);

double tv_distance(const EmpiricalLaw& p, const EmpiricalLaw& q);

struct RateFit {
  double rate = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

RateFit exp_rate_fit(const std::vector<std::pair<double, double>>& curve);

struct DcpDecomposition {
  double direct = 0.0;
  double variance_term = 0.0;
  double cross_term = 0.0;
  double residual() const { return direct - (variance_term + cross_term); }
};

DcpDecomposition dcp_decomposition(std::span<const double> series);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

// Two-sided Wilson score interval for a binomial proportion.
Interval wilson_interval(std::size_t successes, std::size_t n, double confidence);

nlohmann::json to_json(const RateFit& fit);

}  // namespace lmx
