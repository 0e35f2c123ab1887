#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace lmx {

class DataStream;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamVector {
  std::vector<double> coords;

  ParamVector() = default;
  explicit ParamVector(std::size_t d, double v = 0.0) : coords(d, v) {}
  ParamVector(std::initializer_list<double> v) : coords(v) {}
  explicit ParamVector(std::vector<double> v) : coords(std::move(v)) {}

  std::size_t size() const { return coords.size(); }
  double& operator[](std::size_t i) { return coords[i]; }
  double operator[](std::size_t i) const { return coords[i]; }
  std::span<const double> view() const { return coords; }
  std::span<double> view() { return coords; }
  bool operator==(const ParamVector&) const = default;
};

struct DataPoint {
  std::vector<double> coords;

  DataPoint() = default;
  explicit DataPoint(std::size_t m, double v = 0.0) : coords(m, v) {}
  DataPoint(std::initializer_list<double> v) : coords(v) {}
  explicit DataPoint(std::vector<double> v) : coords(std::move(v)) {}

  std::size_t size() const { return coords.size(); }
  double operator[](std::size_t i) const { return coords[i]; }
  std::span<const double> view() const { return coords; }
  bool operator==(const DataPoint&) const = default;
};

double norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

class UpdateFunction {
 public:
  virtual ~UpdateFunction() = default;
  virtual void apply(std::span<const double> theta, std::span<const double> y,
                     std::span<double> out) const = 0;
};

using Potential = std::function<double(std::span<const double>)>;
using MeanField = std::function<void(std::span<const double>, std::span<double>)>;

struct CertifiedConstants {
  double delta = 0.0;
  double b = 0.0;
  double K = 0.0;
  double M = 0.0;
};

class ModelSpec {
 public:
  ModelSpec(std::string name, int d, int m, CertifiedConstants constants,
            std::shared_ptr<const UpdateFunction> H, double beta = 1.0);

  const std::string& name() const { return name_; }
  int d() const { return d_; }
  int m() const { return m_; }
  double delta() const { return c_.delta; }
  double b() const { return c_.b; }
  double K() const { return c_.K; }
  double M() const { return c_.M; }
  double beta() const { return beta_; }
  const CertifiedConstants& constants() const { return c_; }
  const std::map<std::string, double>& params() const { return params_; }
  const Potential& U() const { return U_; }
  const MeanField& h() const { return h_; }
  bool has_potential() const { return static_cast<bool>(U_); }
  double max_step() const { return c_.delta / (c_.K * c_.K); }

  // Unchecked hot path.
  void H(std::span<const double> theta, std::span<const double> y, std::span<double> out) const {
    H_->apply(theta, y, out);
  }

  ModelSpec with_constants(CertifiedConstants c) const;
  ModelSpec with_beta(double beta) const;
  ModelSpec with_potential(Potential U, MeanField h = {}) const;
  ModelSpec with_param(const std::string& key, double value) const;

  nlohmann::json to_json() const;

 private:
  void validate() const;

  std::string name_;
  int d_;
  int m_;
  CertifiedConstants c_;
  std::shared_ptr<const UpdateFunction> H_;
  double beta_;
  Potential U_;
  MeanField h_;
  std::map<std::string, double> params_;
};

ParamVector evaluate_H(const ModelSpec& spec, const ParamVector& theta, const DataPoint& y);

ModelSpec make_linear_model(int d, double M);
ModelSpec make_logistic_model(int d, double c, double M_z);

double sigmoid(double x);

struct GrowthProfile {
  std::string name;
  double c_phi = 1.0;
  double r = 1.0;
  std::function<double(std::span<const double>)> phi;

  double operator()(std::span<const double> theta) const { return phi(theta); }
  bool bound_holds(std::span<const double> theta) const;
};

GrowthProfile coordinate_profile(std::size_t index = 0);
GrowthProfile squared_norm_profile();
GrowthProfile cubic_coordinate_profile(std::size_t index = 0);
std::vector<GrowthProfile> builtin_profiles();
GrowthProfile profile_by_name(const std::string& name);

struct ValidationReport {
  std::string check;
  bool passed = true;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_margin = 0.0;
  double tolerance = 0.0;
  std::vector<double> witness_theta;
  std::vector<double> witness_y;
  std::string message;

  nlohmann::json to_json() const;
};

// Deterministic low-discrepancy points in the closed ball of the given radius;
// the first point is the origin.
std::vector<ParamVector> ball_grid(int d, std::size_t n, double radius);

ValidationReport check_dissipativity(const ModelSpec& spec, const DataStream& stream,
                                     std::size_t n_samples, double grid_radius,
                                     std::uint64_t seed);

ValidationReport check_linear_growth(const ModelSpec& spec, const DataStream& stream,
                                     std::size_t n_samples, double grid_radius,
                                     std::uint64_t seed);

ValidationReport check_gradient_consistency(const ModelSpec& spec, const DataStream& stream,
                                            const std::vector<ParamVector>& theta_grid,
                                            std::size_t n_mc, double fd_step,
                                            std::uint64_t seed, double threshold);

ValidationReport check_growth_profile(const GrowthProfile& profile,
                                      const std::vector<ParamVector>& grid);

}  // namespace lmx
