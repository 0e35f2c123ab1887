#include <doctest.h>

#include <cmath>
#include <numeric>

#include "langevinmix/oracles.hpp"
#include "langevinmix/random.hpp"
#include "langevinmix/stats.hpp"

using namespace lmx;

namespace {

FiniteMarkovParams zero_env() { return FiniteMarkovParams::make({{0.0}}, {{1.0}}); }

FiniteMarkovParams desk_logistic_env() {
  return FiniteMarkovParams::make({{1.0, 0.5, 0.1}, {0.0, 0.1, 0.5}}, {{0.9, 0.1}, {0.1, 0.9}});
}

}  // namespace

TEST_CASE("grid law of the linear chain with a silent environment is N(0, 4/3)") {
  const auto m = make_linear_model(1, 1.0);
  const GridSpec grid{-7.0, 7.0, 1400};
  const auto law = grid_stationary_law(m, zero_env(), 0.5, grid, 500);
  CHECK(law.converged);
  CHECK(law.total_mass() == doctest::Approx(1.0).epsilon(1e-10));
  const double sd = std::sqrt(4.0 / 3.0);
  const auto marg = law.marginal();
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double a = grid.lo + i * grid.width(), b = a + grid.width();
    const double exact = normal_cdf(b / sd) - normal_cdf(a / sd);
    worst = std::max(worst, std::abs(marg[i] - exact));
  }
  CHECK(worst < 1e-4);
  CHECK(law.mean() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(law.variance() == doctest::Approx(4.0 / 3.0).epsilon(1e-3));
  // fixed-point certificate: one more kernel application barely moves the law
  const auto next = apply_kernel(m, zero_env(), 0.5, law);
  double l1 = 0.0;
  for (std::size_t i = 0; i < law.weights.size(); ++i) l1 += std::abs(next.weights[i] - law.weights[i]);
  CHECK(l1 <= 1e-8);
}

TEST_CASE("grid law contraction log decays geometrically") {
  const auto m = make_linear_model(1, 1.0);
  const auto law = grid_stationary_law(m, FiniteMarkovParams::symmetric_two_state(0.9), 0.25,
                                       GridSpec{-10.0, 10.0, 800}, 2000);
  REQUIRE(law.converged);
  std::vector<std::pair<double, double>> curve;
  for (std::size_t i = 0; i < law.contraction_log.size(); ++i)
    curve.emplace_back(static_cast<double>(i), law.contraction_log[i]);
  CHECK(exp_rate_fit(curve).rate > 0.0);
  for (double w : law.weights) CHECK(w >= 0.0);
  CHECK(law.total_mass() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("grid law refuses to report a fixed point it did not reach") {
  const auto m = make_linear_model(1, 1.0);
  CHECK_THROWS_AS(grid_stationary_law(m, zero_env(), 0.5, GridSpec{-7.0, 7.0, 200}, 2), OracleError);
}

TEST_CASE("binned grid law") {
  const auto m = make_linear_model(1, 1.0);
  const auto law = grid_stationary_law(m, zero_env(), 0.5, GridSpec{-6.0, 6.0, 1200}, 500);
  const auto h = law.binned(BinSpec::cube(1, 6.0, 200));
  CHECK(std::accumulate(h.mass.begin(), h.mass.end(), 0.0) + h.overflow == doctest::Approx(1.0));
  CHECK_THROWS_AS(law.binned(BinSpec::cube(1, 6.0, 7)), OracleError);
}

TEST_CASE("AR(1) closed form") {
  const auto iid = ar1_closed_form(0.5, 0.0, 1.0 / 3.0, {});
  CHECK(iid.stat_mean == 0.0);
  CHECK(iid.stat_var == doctest::Approx(13.0 / 9.0));
  CHECK(iid.long_run_var == doctest::Approx(13.0 / 3.0));
  const auto silent = ar1_closed_form(0.5, 0.0, 0.0, {});
  CHECK(silent.stat_var == doctest::Approx(4.0 / 3.0));
  CHECK(ar1_closed_form(0.5, 0.7, 0.0, {}).stat_mean == doctest::Approx(0.7));
  CHECK_THROWS_AS(ar1_closed_form(0.0, 0.0, 1.0, {}), OracleError);
  CHECK_THROWS_AS(ar1_closed_form(2.0, 0.0, 1.0, {}), OracleError);
}

TEST_CASE("AR(1) closed form with a Markov environment agrees with the grid oracle") {
  const auto m = make_linear_model(1, 1.0);
  const double lambda = 0.25;
  std::vector<double> rho(200);
  for (std::size_t l = 0; l < rho.size(); ++l) rho[l] = std::pow(0.8, static_cast<double>(l));
  const auto cf = ar1_closed_form(lambda, 0.0, 1.0, rho);
  const auto law = grid_stationary_law(m, FiniteMarkovParams::symmetric_two_state(0.9), lambda,
                                       GridSpec{-10.0, 10.0, 2000}, 5000);
  CHECK(law.variance() == doctest::Approx(cf.stat_var).epsilon(1e-3));
  const auto silent = ar1_closed_form(lambda, 0.0, 0.0, {});
  const auto silent_law = grid_stationary_law(m, zero_env(), lambda, GridSpec{-8.0, 8.0, 1600}, 5000);
  CHECK(silent_law.variance() == doctest::Approx(silent.stat_var).epsilon(1e-3));
}

TEST_CASE("logistic minimizer") {
  SUBCASE("balanced labels give the origin") {
    // (q, z) and (1 - q, z) equiprobable: the label terms cancel and U is even in theta
    const auto env = FiniteMarkovParams::make({{1.0, 0.5, 0.1}, {0.0, 0.5, 0.1}}, {{0.5, 0.5}, {0.5, 0.5}});
    const auto m = make_logistic_model(2, 0.1, 1.0);
    const auto th = logistic_minimizer(m, env, 1e-12);
    CHECK(norm(th.view()) < 1e-10);
    // flipping both label and feature leaves the per-sample loss unchanged, so no symmetry
    const auto flipped = FiniteMarkovParams::make({{1.0, 0.5, 0.1}, {0.0, -0.5, -0.1}}, {{0.5, 0.5}, {0.5, 0.5}});
    CHECK(norm(logistic_minimizer(m, flipped, 1e-12).view()) > 0.1);
  }
  SUBCASE("unique minimizer from random starts") {
    const auto m = make_logistic_model(2, 0.1, 1.0);
    const auto env = desk_logistic_env();
    const auto ref = logistic_minimizer(m, env, 1e-10);
    CHECK(norm(ref.view()) > 0.01);
    Substream rng(17);
    for (int k = 0; k < 5; ++k) {
      ParamVector start{rng.uniform(-5, 5), rng.uniform(-5, 5)};
      const auto th = logistic_minimizer(m, env, 1e-10, start);
      CHECK(std::abs(th[0] - ref[0]) < 1e-8);
      CHECK(std::abs(th[1] - ref[1]) < 1e-8);
    }
    const auto mf = finite_mean_field(attach_logistic_potential(m, env), env);
    std::vector<double> h(2);
    mf(ref.view(), h);
    CHECK(std::hypot(h[0], h[1]) < 1e-9);
  }
  SUBCASE("strong regularisation pulls the minimizer to the origin") {
    const auto env = desk_logistic_env();
    const double n10 = norm(logistic_minimizer(make_logistic_model(2, 10.0, 1.0), env, 1e-12).view());
    const double n1000 = norm(logistic_minimizer(make_logistic_model(2, 1000.0, 1.0), env, 1e-12).view());
    CHECK(n1000 < n10);
    CHECK(n1000 < 1e-3);
  }
  CHECK_THROWS(logistic_minimizer(make_linear_model(1, 1.0), zero_env(), 1e-10));
}
