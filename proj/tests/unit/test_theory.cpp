#include <doctest.h>

#include <cmath>
#include <numbers>

#include "langevinmix/environment.hpp"
#include "langevinmix/oracles.hpp"
#include "langevinmix/theory.hpp"

using namespace lmx;

namespace {

const double kE1 = std::exp(-1.0);

TheoryConstants toy(double gamma, double C) {
  TheoryConstants c;
  c.gamma = gamma;
  c.C = C;
  c.log_C = std::log(C);
  return c;
}

}  // namespace

TEST_CASE("log_add") {
  CHECK(log_add(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)));
  CHECK(log_add(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_add(-INFINITY, 1.0) == 1.0);
}

TEST_CASE("drift constants, Delta = 1, K = 1, lambda = 0.5") {
  const auto m = make_linear_model(1, 1.0).with_constants({1.0, 0.5, 1.0, 1.0});
  const auto c = drift_constants(m, 0.5);
  CHECK(c.rho == doctest::Approx(0.5));
  CHECK(c.a == doctest::Approx(0.125));
  CHECK(c.s == doctest::Approx(0.75));
  CHECK(c.gamma == doctest::Approx(kE1));
  CHECK(c.c2 < c.a);
  CHECK(c.C >= 1.0);
  // gamma = c1 exp(-(a - c2) r^2) by construction of r
  CHECK(c.log_c1 - (c.a - c.c2) * c.r * c.r == doctest::Approx(-1.0));
}

TEST_CASE("drift constants reject lambda outside (0, Delta/K^2)") {
  const auto m = make_linear_model(1, 1.0);
  CHECK_THROWS_AS(drift_constants(m, 0.5), TheoryError);
  CHECK_THROWS_AS(drift_constants(m, 0.0), TheoryError);
  CHECK_NOTHROW(drift_constants(m, 0.49));
}

TEST_CASE("iterated drift bound") {
  const auto c = toy(kE1, 2.0);
  CHECK(iterated_drift_bound(c, 1.0, 1) == doctest::Approx(kE1 + 2.0 / (1.0 - kE1)).epsilon(1e-12));
  CHECK(iterated_drift_bound(c, 1.0, 1) == doctest::Approx(3.532).epsilon(1e-3));
  CHECK(iterated_drift_bound(c, 5.0, 0) == doctest::Approx(5.0 + 2.0 / (1.0 - kE1)));
  CHECK(iterated_drift_bound(c, 5.0, 200) == doctest::Approx(2.0 / (1.0 - kE1)));
}

TEST_CASE("minorization constants, d=1, lambda=0.5, K=1, M=1, R=1") {
  const auto m = make_linear_model(1, 1.0);
  const auto mc = minorization_constants(m, 0.5, 1.0);
  CHECK(mc.r_star == doctest::Approx(3.5));
  CHECK(mc.m_floor == doctest::Approx(8.72e-4).epsilon(2e-3));
  CHECK(mc.m_floor == doctest::Approx(std::exp(-6.125) / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(mc.alpha_tilde == doctest::Approx(2.0 * mc.m_floor).epsilon(1e-12));
  CHECK(mc.alpha_tilde == doctest::Approx(1.744e-3).epsilon(2e-3));
}

TEST_CASE("minorization monotonicity and limits") {
  const auto m = make_linear_model(1, 1.0);
  CHECK(minorization_constants(m, 0.25, 1e-8).alpha_tilde < 1e-7);
  // r* grows with M at fixed R, so alpha_tilde falls
  const auto a1 = minorization_constants(make_linear_model(1, 1.0), 0.25, 0.5).alpha_tilde;
  const auto a2 = minorization_constants(make_linear_model(1, 2.0), 0.25, 0.5).alpha_tilde;
  CHECK(a2 < a1);
  CHECK(minorization_constants(m, 0.25, 1e-3).alpha_tilde <= 0.999);
}

TEST_CASE("ball volume") {
  CHECK(std::exp(log_ball_volume(1, 2.0)) == doctest::Approx(4.0));
  CHECK(std::exp(log_ball_volume(2, 1.0)) == doctest::Approx(std::numbers::pi));
  CHECK(std::exp(log_ball_volume(3, 1.0)) == doctest::Approx(4.0 / 3.0 * std::numbers::pi));
}

TEST_CASE("coupling rate bundle") {
  const auto m = make_linear_model(1, 1.0);
  const auto c = coupling_rate(m, 0.25);
  CHECK_NOTHROW(c.validate());
  CHECK(c.gamma == doctest::Approx(kE1));
  CHECK(c.gamma1 == doctest::Approx(0.5259).epsilon(1e-4));
  CHECK(c.gamma2 == doctest::Approx(0.6839).epsilon(1e-4));
  CHECK(c.gamma3 == doctest::Approx(0.8420).epsilon(1e-4));
  CHECK(c.kappa > 0.0);
  CHECK(c.m_n(c.N) >= 1);
  CHECK(c.m_n(c.N - 1) == 0);
  for (std::size_t n = 1; n < 500; ++n) CHECK(c.m_n(n) >= c.m_n(n - 1));
  // the smallest R on the doubling grid with 2C < (gamma' - gamma) e^{aR^2/2}
  CHECK(std::log(2.0) + c.log_C < std::log(c.gamma1 - c.gamma) + c.a * c.R * c.R / 2.0);
  CHECK_FALSE(std::log(2.0) + c.log_C < std::log(c.gamma1 - c.gamma) + c.a * (c.R / 2) * (c.R / 2) / 2.0);
  CHECK(c.rho > 0.0);
  CHECK(c.rho < 1.0);
  CHECK(c.kappa_corrected >= 0.0);
}

TEST_CASE("coupling rate for the logistic model at small lambda keeps log-space values") {
  const auto m = make_logistic_model(2, 0.1, 1.0);
  const auto c = coupling_rate(m, 0.01);
  CHECK_NOTHROW(c.validate());
  CHECK(std::isfinite(c.log_C));
  CHECK(c.kappa > 0.0);
  const auto j = c.to_json();
  CHECK(j.contains("log_alpha_tilde"));
}

TEST_CASE("coupling bound") {
  const auto c = coupling_rate(make_linear_model(1, 1.0), 0.25);
  const auto at_N = coupling_bound(c, 1.0, 1.0, c.N);
  CHECK(at_N.in_range);
  CHECK(at_N.value <= 1.0);
  CHECK(coupling_bound(c, 1.0, 1.0, c.N - 1).in_range == false);
  CHECK(coupling_bound(c, 1.0, 1.0, 100000).value < 1e-300 + 1e-300);
  double prev = 2.0;
  for (std::size_t n = c.N; n < c.N + 100; ++n) {
    const double v = coupling_bound(c, 3.0, 4.0, n).value;
    CHECK(v <= prev);
    prev = v;
  }
  auto small = c;
  small.kappa = 1e-3;
  CHECK(coupling_bound(small, 1.0, 1.0, small.N).value == 1.0);
  CHECK(coupling_bound(c, 1.0, 1.0, 40).value == doctest::Approx(2.5 * std::exp(-c.kappa * 40)));
}

TEST_CASE("mixing transfer bound") {
  const auto c = coupling_rate(make_linear_model(1, 1.0), 0.25);
  const DataStream env(FiniteMarkovParams::symmetric_two_state(0.9));
  const auto alphaY = env.mixing_curve(200);
  const double V0 = 1.0;
  const double pref = V0 + 1.5 + c.C / (2.0 * (1.0 - c.gamma));
  SUBCASE("n = 20 plug-in formula, flagged below 2N") {
    const auto b = mixing_transfer_bound(c, V0, alphaY, 20);
    CHECK(b.value == doctest::Approx(std::pow(0.8, 10) / 4.0 + pref * std::exp(-10.0 * c.kappa)));
    CHECK_FALSE(b.in_range);
  }
  SUBCASE("never below the environment coefficient") {
    for (std::size_t n = 2 * c.N; n <= 200; ++n) {
      const auto b = mixing_transfer_bound(c, V0, alphaY, n);
      CHECK(b.in_range);
      CHECK(b.value >= alphaY.at(n / 2));
    }
  }
  SUBCASE("iid environment leaves the pure exponential") {
    const DataStream iid(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
    const auto b = mixing_transfer_bound(c, V0, iid.mixing_curve(100), 60);
    CHECK(b.value == doctest::Approx(pref * std::exp(-30.0 * c.kappa)));
  }
}

TEST_CASE("moment bound") {
  const auto m = make_linear_model(1, 1.0);
  const auto c = toy(kE1, 2.0);
  CHECK(moment_bound(m, c, squared_norm_profile(), 1.0, 2.0) == doctest::Approx(3.886).epsilon(1e-3));
  GrowthProfile bounded{"bounded", 1.0, 0.0, [](std::span<const double>) { return 1.0; }};
  const double b0 = moment_bound(m, c, bounded, 1.0, 2.0);
  CHECK(b0 == doctest::Approx(1.0 + std::sqrt(1.0 + 2.0 / (1.0 - kE1))));
  CHECK(moment_bound(m, c, cubic_coordinate_profile(), 1.0, 2.0) > moment_bound(m, c, squared_norm_profile(), 1.0, 2.0));
  CHECK(moment_bound(m, c, squared_norm_profile(), 5.0, 2.0) > moment_bound(m, c, squared_norm_profile(), 1.0, 2.0));
}

TEST_CASE("Ibragimov bound") {
  CHECK(ibragimov_bound(3.0, 0.0, 0.5) == 0.0);
  CHECK(ibragimov_bound(1.0, 0.25, 0.5) == doctest::Approx(4.5));
  // +-1 variables with a joint law giving Cov = 0.1: p(+,+) = p(-,-) = 0.275, p(+,-) = p(-,+) = 0.225.
  const double p = 0.275, q = 0.225;
  const double cov = (p + p) - (q + q);
  CHECK(cov == doctest::Approx(0.1));
  CHECK(std::abs(cov) <= ibragimov_bound(1.0, 0.05, 0.5));
  CHECK(ibragimov_bound(1.0, 0.05, 0.5) == doctest::Approx(9.0 * std::sqrt(0.05)));
  CHECK_THROWS_AS(ibragimov_bound(1.0, 0.3, 0.5), TheoryError);
}

TEST_CASE("autocovariance bound") {
  const auto c = coupling_rate(make_linear_model(1, 1.0), 0.25);
  const DataStream env(FiniteMarkovParams::symmetric_two_state(0.9));
  const auto alphaY = env.mixing_curve(400);
  double prev = INFINITY;
  for (std::size_t l = 2 * c.N; l < 400; ++l) {
    const auto b = autocov_bound(c, coordinate_profile(), alphaY, 0.5, l, 1.0);
    CHECK(b.in_range);
    CHECK(b.value <= prev * (1 + 1e-12));
    prev = b.value;
  }
  CHECK_FALSE(autocov_bound(c, coordinate_profile(), alphaY, 0.5, 2 * c.N - 1, 1.0).in_range);
  const DataStream iid(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
  const auto curve = iid.mixing_curve(400);
  const double b1 = autocov_bound(c, coordinate_profile(), curve, 0.5, 100, 1.0).value;
  const double b2 = autocov_bound(c, coordinate_profile(), curve, 0.5, 200, 1.0).value;
  CHECK(std::log(b1) - std::log(b2) == doctest::Approx(c.kappa * 50.0 / 4.0));
}

TEST_CASE("verify_drift") {
  SUBCASE("linear model passes on the 21-point grid and MC agrees with the closed form") {
    const auto m = make_linear_model(1, 1.0);
    const DataStream st(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
    const auto c = coupling_rate(m, 0.25);
    const auto rep = verify_drift(m, st, c, radial_grid(1, 21, 3.0 * c.r), 100000, 1);
    CHECK(rep.summary.passed);
    CHECK(rep.points.size() == 84);
    // At theta = 0 the MC mean and the closed form agree to a few SE.
    CHECK(rep.points[0].theta_norm == 0.0);
    CHECK(std::abs(rep.points[0].log_mc - rep.points[0].log_closed) < 0.01);
  }
  SUBCASE("logistic model passes") {
    const auto base = make_logistic_model(2, 0.1, 1.0);
    const auto env = FiniteMarkovParams::make({{1.0, 0.5, 0.1}, {0.0, 0.1, 0.5}}, {{0.9, 0.1}, {0.1, 0.9}});
    const DataStream st(env);
    const auto c = coupling_rate(base, 0.01);
    CHECK(verify_drift(base, st, c, radial_grid(2, 21, 3.0 * c.r), 100000, 2).summary.passed);
  }
  SUBCASE("an inflated exponent is caught at large norm") {
    const auto m = make_linear_model(1, 1.0);
    const DataStream st(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
    auto c = coupling_rate(m, 0.25);
    const auto grid = radial_grid(1, 21, 3.0 * c.r);
    c.a *= 7.5;
    const auto rep = verify_drift(m, st, c, grid, 20000, 3);
    CHECK_FALSE(rep.summary.passed);
    REQUIRE_FALSE(rep.summary.witness_theta.empty());
    CHECK(rep.summary.witness_theta[0] > 0.0);
    CHECK(rep.points[0].ok);
  }
}

TEST_CASE("radial grid") {
  const auto g = radial_grid(3, 21, 6.0);
  CHECK(g.size() == 21);
  CHECK(norm(g.front().view()) == 0.0);
  CHECK(norm(g.back().view()) == doctest::Approx(6.0));
}
