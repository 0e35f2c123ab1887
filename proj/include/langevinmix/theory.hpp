#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "langevinmix/environment.hpp"
#include "langevinmix/model.hpp"

namespace lmx {

class TheoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// log(e^x + e^y) without overflow.
double log_add(double x, double y);

struct DriftConstants {
  double lambda = 0.0;
  double beta = 1.0;
  double rho = 0.0;
  double a = 0.0;
  double s = 0.0;  // 1 - 4 lambda a / beta
  double c2 = 0.0;
  double log_c1 = 0.0;
  double r = 0.0;
  double gamma = 0.0;
  double log_C = 0.0;
  double C = 1.0;
};

DriftConstants drift_constants(const ModelSpec& model, double lambda);

struct MinorizationConstants {
  double R = 0.0;
  double r_star = 0.0;
  double log_m_floor = 0.0;
  double m_floor = 0.0;
  double log_volume = 0.0;
  double log_alpha_tilde = 0.0;
  double alpha_tilde = 0.0;
};

MinorizationConstants minorization_constants(const ModelSpec& model, double lambda, double R);

double log_ball_volume(int d, double R);

struct TheoryConstants {
  double lambda = 0.0;
  double beta = 1.0;
  int d = 1;
  double rho = 0.0;
  double a = 0.0;
  double s = 0.0;
  double r = 0.0;
  double gamma = 0.0;
  double C = 1.0;
  double log_C = 0.0;
  double R = 0.0;
  double r_star = 0.0;
  double m_floor = 0.0;
  double log_m_floor = 0.0;
  double alpha_tilde = 0.0;
  double log_alpha_tilde = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double gamma3 = 0.0;
  double c_m = 0.0;
  double kappa = 0.0;
  std::size_t N = 0;
  // Rate from (1 - alpha_tilde)^{m_n}; informational.
  double kappa_corrected = 0.0;

  void validate() const;
  std::size_t m_n(std::size_t n) const;
  double log_V(std::span<const double> theta) const;
  nlohmann::json to_json() const;
};

TheoryConstants coupling_rate(const ModelSpec& model, double lambda);

double iterated_drift_bound(const TheoryConstants& c, double V0, std::size_t t);

struct BoundValue {
  double value = 0.0;
  bool in_range = true;  // false when n is below the threshold where the bound applies
};

BoundValue coupling_bound(const TheoryConstants& c, double V1, double V2, std::size_t n);
BoundValue mixing_transfer_bound(const TheoryConstants& c, double V0, const MixingCurve& alphaY,
                                 std::size_t n);
double moment_bound(const ModelSpec& model, const TheoryConstants& c, const GrowthProfile& profile,
                    double V0, double p);
double ibragimov_bound(double c, double alpha, double eps);
BoundValue autocov_bound(const TheoryConstants& c, const GrowthProfile& profile,
                         const MixingCurve& alphaY, double eps, std::size_t l, double V0);

std::vector<ParamVector> radial_grid(int d, std::size_t points, double max_norm);

struct DriftPoint {
  double theta_norm = 0.0;
  std::vector<double> y;
  double log_mc = 0.0;
  double log_mc_lower = 0.0;  // log(mean - 3 SE), -inf when nonpositive
  double log_closed = 0.0;
  double log_rhs = 0.0;
  bool ok = true;
};

struct DriftReport {
  ValidationReport summary;
  std::vector<DriftPoint> points;
  nlohmann::json to_json() const;
};

DriftReport verify_drift(const ModelSpec& model, const DataStream& stream,
                         const TheoryConstants& constants, const std::vector<ParamVector>& theta_grid,
                         std::size_t n_mc, std::uint64_t seed, std::size_t n_y = 4);

}  // namespace lmx
