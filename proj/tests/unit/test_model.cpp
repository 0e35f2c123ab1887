#include <doctest.h>

#include <omp.h>

#include <cmath>

#include "langevinmix/environment.hpp"
#include "langevinmix/model.hpp"

using namespace lmx;

namespace {

DataStream uniform_stream(int m = 1, double w = 1.0) {
  return DataStream(IidBoundedParams{m, w, IidBoundedParams::Shape::box});
}

DataStream zero_stream(int m = 1) {
  return DataStream(FiniteMarkovParams::make({std::vector<double>(static_cast<std::size_t>(m), 0.0)}, {{1.0}}));
}

}  // namespace

TEST_CASE("evaluate_H on the linear model") {
  const auto spec = make_linear_model(1, 1.0);
  CHECK(evaluate_H(spec, ParamVector{2.0}, DataPoint{0.5})[0] == doctest::Approx(1.5));
}

TEST_CASE("evaluate_H on the logistic model") {
  const auto spec = make_logistic_model(2, 0.1, 2.0);
  SUBCASE("theta = 0 with q = 1/2 gives the zero vector") {
    const auto h = evaluate_H(spec, ParamVector{0.0, 0.0}, DataPoint{0.5, 1.3, -0.7});
    CHECK(h[0] == 0.0);
    CHECK(h[1] == 0.0);
  }
  SUBCASE("scalar evaluation at theta = (1, 0), (q, z) = (1, (1, 1))") {
    const auto h = evaluate_H(spec, ParamVector{1.0, 0.0}, DataPoint{1.0, 1.0, 1.0});
    CHECK(h[0] == doctest::Approx(-0.0689).epsilon(1e-3));
    CHECK(h[1] == doctest::Approx(-0.2689).epsilon(1e-3));
    const double s1 = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(h[0] == doctest::Approx(-(1.0 - s1) + 0.2).epsilon(1e-14));
  }
}

TEST_CASE("evaluate_H rejects dimension mismatch and is deterministic") {
  const auto spec = make_linear_model(2, 1.0);
  CHECK_THROWS_AS(evaluate_H(spec, ParamVector{1.0}, DataPoint{0.0, 0.0}), ModelError);
  CHECK_THROWS_AS(evaluate_H(spec, ParamVector{1.0, 2.0}, DataPoint{0.0}), ModelError);
  const auto a = evaluate_H(spec, ParamVector{0.1, 0.7}, DataPoint{0.3, -0.2});
  const auto b = evaluate_H(spec, ParamVector{0.1, 0.7}, DataPoint{0.3, -0.2});
  CHECK(a == b);
}

TEST_CASE("evaluate_H rejects non-finite output") {
  const auto spec = make_linear_model(1, 1.0);
  CHECK_THROWS_AS(evaluate_H(spec, ParamVector{INFINITY}, DataPoint{0.0}), ModelError);
}

TEST_CASE("certified constants of the builtin models") {
  SUBCASE("linear d=1, M=1") {
    const auto s = make_linear_model(1, 1.0);
    CHECK(s.delta() == 0.5);
    CHECK(s.b() == 0.5);
    CHECK(s.K() == 1.0);
    CHECK(s.K() > s.delta() / std::sqrt(2.0));
  }
  SUBCASE("linear d=3, M=2") {
    const auto s = make_linear_model(3, 2.0);
    CHECK(s.delta() == 0.5);
    CHECK(s.b() == 2.0);
    CHECK(s.K() == 1.0);
  }
  SUBCASE("logistic c=0.1, M_z=1") {
    const auto s = make_logistic_model(2, 0.1, 1.0);
    CHECK(s.delta() == doctest::Approx(0.1));
    CHECK(s.b() == doctest::Approx(2.5));
    CHECK(s.K() == 1.0);
    CHECK(s.M() == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.m() == 3);
  }
  SUBCASE("logistic c=1, M_z=1") {
    const auto s = make_logistic_model(2, 1.0, 1.0);
    CHECK(s.K() == 2.0);
    CHECK(s.delta() == 1.0);
    CHECK(s.b() == doctest::Approx(0.25));
  }
}

TEST_CASE("construction rejects constants violating K > Delta/sqrt(2)") {
  const auto s = make_linear_model(1, 1.0);
  CHECK_THROWS_AS(s.with_constants({0.5, 0.5, 0.3, 1.0}), ModelError);
  CHECK_THROWS_AS(s.with_constants({0.5, -1.0, 1.0, 1.0}), ModelError);
  CHECK_THROWS_AS(s.with_constants({0.5, 0.5, 1.0, NAN}), ModelError);
  CHECK_THROWS_AS(s.with_beta(0.0), ModelError);
  CHECK_THROWS_AS(make_linear_model(0, 1.0), ModelError);
  CHECK_THROWS_AS(make_logistic_model(2, -0.1, 1.0), ModelError);
}

TEST_CASE("builtin models pass both validators on 1e5 pairs") {
  SUBCASE("linear") {
    const auto s = make_linear_model(1, 1.0);
    const auto st = uniform_stream();
    const auto d = check_dissipativity(s, st, 100000, 20.0, 1);
    const auto l = check_linear_growth(s, st, 100000, 20.0, 2);
    CHECK(d.passed);
    CHECK(d.violations == 0);
    CHECK(l.passed);
    CHECK(d.samples == 100000);
  }
  SUBCASE("logistic") {
    const auto s = make_logistic_model(2, 0.1, 1.0);
    const DataStream st(FiniteMarkovParams::make({{1.0, 0.6, 0.8}, {0.0, -1.0, 0.0}}, {{0.7, 0.3}, {0.4, 0.6}}));
    CHECK(check_dissipativity(s, st, 100000, 50.0, 3).passed);
    CHECK(check_linear_growth(s, st, 100000, 50.0, 4).passed);
  }
}

TEST_CASE("overclaimed constants are caught with a witness") {
  const auto st = uniform_stream();
  SUBCASE("Delta = 2 fails dissipativity at large norm") {
    const auto s = make_linear_model(1, 1.0).with_constants({2.0, 0.5, 2.0, 1.0});
    const auto r = check_dissipativity(s, st, 10000, 20.0, 5);
    CHECK_FALSE(r.passed);
    REQUIRE(r.witness_theta.size() == 1);
    CHECK(std::abs(r.witness_theta[0]) > 0.5);
  }
  SUBCASE("K = 0.4 fails linear growth") {
    const auto s = make_linear_model(1, 1.0).with_constants({0.5, 0.5, 0.4, 1.0});
    CHECK_FALSE(check_linear_growth(s, st, 10000, 20.0, 6).passed);
  }
}

TEST_CASE("theta = 0 never witnesses a dissipativity violation") {
  const auto s = make_linear_model(1, 1.0).with_constants({2.0, 0.5, 2.0, 1.0});
  const auto r = check_dissipativity(s, uniform_stream(), 1000, 20.0, 5);
  REQUIRE_FALSE(r.witness_theta.empty());
  CHECK(r.witness_theta[0] != 0.0);
}

TEST_CASE("logistic H(0, y) is within K") {
  const auto s = make_logistic_model(2, 0.1, 1.0);
  const auto h = evaluate_H(s, ParamVector{0.0, 0.0}, DataPoint{0.0, 0.6, 0.8});
  CHECK(norm(h.view()) <= 0.5 + 1e-15);
  CHECK(norm(h.view()) <= s.K());
}

TEST_CASE("gradient consistency") {
  SUBCASE("linear model with Y = 0 matches exactly up to finite-difference error") {
    const auto s = make_linear_model(1, 1.0);
    const auto r = check_gradient_consistency(s, zero_stream(), ball_grid(1, 7, 2.0), 1000, 1e-4, 1, 1e-8);
    CHECK(r.passed);
    CHECK(r.worst_margin < 1e-8);
  }
  SUBCASE("missing potential is an error") {
    const auto s = make_logistic_model(2, 0.1, 1.0);
    const DataStream st(FiniteMarkovParams::make({{1.0, 0.5, 0.1}}, {{1.0}}));
    CHECK_THROWS_AS(check_gradient_consistency(s, st, ball_grid(2, 3, 1.0), 100, 1e-4, 1, 1e-3), ModelError);
  }
}

TEST_CASE("growth profiles hold on the grid") {
  const auto grid = ball_grid(3, 1000, 10.0);
  for (const auto& p : builtin_profiles()) {
    CHECK(check_growth_profile(p, grid).passed);
  }
  CHECK(coordinate_profile().r == 1.0);
  CHECK(squared_norm_profile().r == 2.0);
  CHECK(cubic_coordinate_profile().r == 3.0);
  CHECK(profile_by_name("identity").name == "coordinate");
  CHECK_THROWS(profile_by_name("nope"));
}

TEST_CASE("ball grid is deterministic and inside the ball") {
  const auto g = ball_grid(2, 200, 3.0);
  CHECK(g.size() == 200);
  CHECK(g.front() == ParamVector{0.0, 0.0});
  for (const auto& p : g) CHECK(norm(p.view()) <= 3.0 + 1e-12);
  CHECK(g == ball_grid(2, 200, 3.0));
}

TEST_CASE("validators are independent of the thread count") {
  const auto s = make_linear_model(2, 1.0);
  const auto st = uniform_stream(2, 0.5);
  omp_set_num_threads(8);
  const auto a = check_dissipativity(s, st, 5000, 5.0, 11);
  omp_set_num_threads(1);
  const auto b = check_dissipativity(s, st, 5000, 5.0, 11);
  omp_set_num_threads(omp_get_num_procs());
  CHECK(a.worst_margin == b.worst_margin);
}
