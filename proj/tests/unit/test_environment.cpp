#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "langevinmix/environment.hpp"
#include "langevinmix/stats.hpp"

using namespace lmx;

namespace {

double moment_se(const std::vector<double>& xs, double& mean) {
  mean = compensated_mean(xs);
  NeumaierSum ss;
  for (double x : xs) ss.add((x - mean) * (x - mean));
  return std::sqrt(ss.sum() / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

}  // namespace

TEST_CASE("iid uniform stream stays in its box") {
  const DataStream st(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
  auto state = st.initial_state(3);
  std::vector<double> y(1);
  for (int i = 0; i < 100000; ++i) {
    st.advance(state, y);
    REQUIRE(std::abs(y[0]) <= 1.0);
  }
  CHECK(st.M() == 1.0);
}

TEST_CASE("bound respect over 1e6 draws for every stream kind") {
  const std::vector<DataStream> streams{
      DataStream(IidBoundedParams{3, 0.5, IidBoundedParams::Shape::box}),
      DataStream(IidBoundedParams{2, 1.5, IidBoundedParams::Shape::ball}),
      DataStream(MovingAverageParams{2, 5, 1.0, 0.8}),
      DataStream(FiniteMarkovParams::make({{1.0, 0.5, 0.1}, {0.0, 0.1, 0.5}}, {{0.9, 0.1}, {0.1, 0.9}})),
  };
  for (const auto& st : streams) {
    auto state = st.initial_state(11);
    std::vector<double> y(static_cast<std::size_t>(st.m()));
    double worst = 0.0;
    for (int i = 0; i < 1000000; ++i) {
      st.advance(state, y);
      worst = std::max(worst, norm(y));
    }
    CHECK(worst <= st.M() * (1.0 + 1e-15));
  }
}

TEST_CASE("finite Markov transition frequency from +1") {
  const DataStream st(FiniteMarkovParams::symmetric_two_state(0.9));
  std::size_t from_high = 0, stay = 0;
  auto state = st.initial_state(5);
  std::vector<double> y(1), prev(1);
  st.advance(state, prev);
  for (int i = 0; i < 200000; ++i) {
    st.advance(state, y);
    if (prev[0] > 0) {
      ++from_high;
      if (y[0] > 0) ++stay;
    }
    prev = y;
  }
  const double p = static_cast<double>(stay) / static_cast<double>(from_high);
  CHECK(std::abs(p - 0.9) < 4.0 * std::sqrt(0.09 / static_cast<double>(from_high)));
}

TEST_CASE("next is value-semantic") {
  const DataStream st(IidBoundedParams{2, 1.0, IidBoundedParams::Shape::box});
  const auto s0 = st.initial_state(9);
  const auto [a, s1] = st.next(s0);
  const auto [b, s1b] = st.next(s0);
  CHECK(a == b);
  const auto [c, s2] = stream_next(st, s1);
  CHECK_FALSE(c == a);
}

TEST_CASE("moving average output is clamped") {
  const DataStream st(MovingAverageParams{1, 4, 5.0, 0.3});
  auto state = st.initial_state(1);
  std::vector<double> y(1);
  for (int i = 0; i < 10000; ++i) {
    st.advance(state, y);
    REQUIRE(std::abs(y[0]) <= 0.3 + 1e-15);
  }
}

TEST_CASE("finite Markov parameter invariants") {
  const auto p = FiniteMarkovParams::make({{0.0}, {1.0}, {2.0}}, {{0.5, 0.5, 0.0}, {0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}});
  double tot = 0.0;
  for (double x : p.pi0) {
    CHECK(x >= 0.0);
    tot += x;
  }
  CHECK(tot == doctest::Approx(1.0).epsilon(1e-14));
  for (std::size_t j = 0; j < 3; ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < 3; ++i) v += p.pi0[i] * p.P[i][j];
    CHECK(std::abs(v - p.pi0[j]) < 1e-10);
  }
  CHECK_THROWS_AS(FiniteMarkovParams::make({{0.0}, {1.0}}, {{0.5, 0.6}, {0.5, 0.5}}), EnvironmentError);
  CHECK_THROWS_AS(FiniteMarkovParams::make({{0.0}, {1.0}}, {{1.0}}), EnvironmentError);
}

TEST_CASE("exact alpha of the symmetric two-state chain") {
  const auto p = FiniteMarkovParams::symmetric_two_state(0.9);
  CHECK(exact_alpha_finite(p, 1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(exact_alpha_finite(p, 0) == doctest::Approx(0.25).epsilon(1e-12));
  for (std::size_t n = 0; n <= 50; ++n)
    CHECK(std::abs(exact_alpha_finite(p, n) - std::pow(0.8, static_cast<double>(n)) / 4.0) <= 1e-12);
  const auto q = FiniteMarkovParams::symmetric_two_state(0.3);
  CHECK(exact_alpha_finite(q, 3) == doctest::Approx(std::pow(0.4, 3) / 4.0).epsilon(1e-12));
}

TEST_CASE("exact alpha of an iid chain vanishes and curves are monotone") {
  const auto iid = FiniteMarkovParams::make({{0.0}, {1.0}, {3.0}}, {{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}});
  for (std::size_t n = 1; n < 10; ++n) CHECK(exact_alpha_finite(iid, n) <= 1e-15);
  const DataStream st(FiniteMarkovParams::make({{0.0}, {1.0}, {2.0}}, {{0.5, 0.5, 0.0}, {0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}}));
  const auto curve = st.mixing_curve(40);
  CHECK(curve.exact);
  CHECK(curve.is_valid());
  for (std::size_t n = 1; n < curve.size(); ++n) CHECK(curve.at(n) <= curve.at(n - 1) + 1e-15);
  CHECK_THROWS(curve.at(41));
}

TEST_CASE("exact alpha rejects too many states") {
  std::vector<std::vector<double>> states;
  Matrix P(17, std::vector<double>(17, 1.0 / 17.0));
  for (int i = 0; i < 17; ++i) states.push_back({static_cast<double>(i)});
  CHECK_THROWS_AS(exact_alpha_finite(FiniteMarkovParams::make(states, P), 1), EnvironmentError);
}

TEST_CASE("moving average mixing curve") {
  const DataStream st(MovingAverageParams{1, 4, 1.0, 1.0});
  const auto c = st.mixing_curve(10);
  for (std::size_t n = 4; n <= 10; ++n) CHECK(c.at(n) == 0.0);
  CHECK(c.at(1) <= 0.25);
}

TEST_CASE("stationarity: early and late moments agree") {
  const std::vector<DataStream> streams{
      DataStream(FiniteMarkovParams::make({{-1.0}, {2.0}}, {{0.95, 0.05}, {0.2, 0.8}})),
      DataStream(MovingAverageParams{1, 6, 1.0, 2.0}),
      DataStream(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box}),
  };
  for (const auto& st : streams) {
    // Across independent replicas, the t = 0 and t = 1000 marginals must match.
    std::vector<double> early, late;
    for (std::uint64_t r = 0; r < 20000; ++r) {
      auto state = st.initial_state(derive_key(77, r));
      std::vector<double> y(1);
      st.advance(state, y);
      early.push_back(y[0]);
      for (int t = 0; t < 1000; ++t) st.advance(state, y);
      late.push_back(y[0]);
    }
    double m0, m1;
    const double se0 = moment_se(early, m0), se1 = moment_se(late, m1);
    CHECK(std::abs(m0 - m1) <= 4.0 * std::sqrt(se0 * se0 + se1 * se1));
    CHECK(std::abs(m0 - st.stationary_mean()) <= 4.0 * se0);
  }
}

TEST_CASE("partition estimator") {
  SUBCASE("iid normals give a small value") {
    Substream rng(1);
    std::vector<double> xs(1000000);
    for (auto& x : xs) x = rng.normal();
    const auto part = quantile_partition(xs, 1, 0, 8);
    CHECK(part.cells() == 8);
    CHECK(empirical_alpha_partition(xs, 1, part, 5) <= 0.01);
  }
  SUBCASE("perfect copy at lag 0 gives 1/4") {
    std::vector<double> xs;
    for (int i = 0; i < 1000; ++i) xs.push_back(i % 2 ? 1.0 : -1.0);
    PartitionSpec part{0, {0.0}};
    CHECK(empirical_alpha_partition(xs, 1, part, 0) == doctest::Approx(0.25));
  }
  SUBCASE("two-state chain at lag 1 matches the exact value") {
    const DataStream st(FiniteMarkovParams::symmetric_two_state(0.9));
    const auto tr = freeze(st, 1000000, 4);
    PartitionSpec part{0, {0.0}};
    CHECK(std::abs(empirical_alpha_partition(tr.data, 1, part, 1) - 0.2) <= 0.01);
  }
  SUBCASE("insufficient data") {
    std::vector<double> xs(50, 1.0);
    PartitionSpec part{0, {0.0}};
    CHECK_THROWS_AS(empirical_alpha_partition(xs, 1, part, 10), EnvironmentError);
  }
}

TEST_CASE("summability of a geometric curve converges") {
  const DataStream st(FiniteMarkovParams::symmetric_two_state(0.9));
  const auto rep = summability(st.mixing_curve(2000), 0.5);
  CHECK(rep.converged);
  REQUIRE(rep.converged_at);
  const double q = std::sqrt(0.8);
  CHECK(rep.partial_sum == doctest::Approx(0.5 / (1.0 - q)).epsilon(1e-6));
}

TEST_CASE("shift_trajectory") {
  FrozenTrajectory tr{1, 10.0, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  CHECK(shift_trajectory(tr, 0).data == tr.data);
  CHECK(shift_trajectory(tr, 3).data == std::vector<double>{3, 4, 5, 6, 7, 8, 9});
  CHECK(shift_trajectory(shift_trajectory(tr, 2), 3).data == shift_trajectory(tr, 5).data);
  CHECK_THROWS_AS(shift_trajectory(tr, 11), EnvironmentError);
}

TEST_CASE("binary trajectory round trip") {
  const DataStream st(IidBoundedParams{3, 0.7, IidBoundedParams::Shape::ball});
  const auto tr = freeze(st, 1234, 8);
  std::filesystem::create_directories(LMX_TEST_TMP);
  const auto path = std::filesystem::path(LMX_TEST_TMP) / "traj.bin";
  write_trajectory(tr, path);
  CHECK(std::filesystem::file_size(path) == 24 + 8 * 3 * 1234);
  const auto back = read_trajectory(path);
  CHECK(back.m == 3);
  CHECK(back.M == tr.M);
  CHECK(back.data == tr.data);
}

TEST_CASE("stationary moments and autocorrelation of a finite chain") {
  const DataStream st(FiniteMarkovParams::symmetric_two_state(0.9));
  CHECK(st.stationary_mean() == doctest::Approx(0.0));
  CHECK(st.stationary_variance() == doctest::Approx(1.0));
  const auto rho = st.autocorrelation(5);
  for (std::size_t l = 0; l <= 5; ++l) CHECK(rho[l] == doctest::Approx(std::pow(0.8, static_cast<double>(l))));
}
