// Serial reference vs OpenMP kernels on the replica ensembles. Prints wall-clock per kernel
// and checks that both paths agree bitwise.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "langevinmix/ensemble.hpp"
#include "langevinmix/experiments.hpp"

using namespace lmx;

namespace {

template <class Fn>
double seconds(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Run>
void bench(const char* name, Run&& run) {
  decltype(run(Exec::serial)) serial, parallel;
  const double ts = seconds([&] { serial = run(Exec::serial); });
  const double tp = seconds([&] { parallel = run(Exec::parallel); });
  std::printf("%-20s serial %8.3f s  parallel %8.3f s  speedup %5.2fx  %s\n", name, ts, tp, ts / tp,
              serial == parallel ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t scale = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  std::printf("threads %d, scale %zu\n", omp_get_max_threads(), scale);

  const auto lin = make_linear_model(1, 1.0);
  const DataStream iid(IidBoundedParams{1, 1.0, IidBoundedParams::Shape::box});
  const DataStream markov(FiniteMarkovParams::symmetric_two_state(0.9));
  const KernelSetup plain{0.1, 1.0, std::nullopt};
  const double lambda = 0.25;
  const KernelSetup split{lambda, 1.0,
                          SplitKernelParams::from_model(lin, lambda, best_regeneration_radius(lin, lambda))};

  bench("endpoint_ensemble", [&](Exec e) {
    return endpoint_ensemble(lin, markov, plain, ParamVector{5.0}, {10, 50, 100}, 100000 * scale, 7, e);
  });
  bench("replica_summaries", [&](Exec e) {
    return replica_summaries(lin, iid, KernelSetup{0.5, 1.0, std::nullopt}, ParamVector{0.0}, 20000,
                             100 * scale, 7, e);
  });
  Theta2Law point;
  point.point = ParamVector{3.0};
  bench("coupling_samples", [&](Exec e) {
    return coupling_samples(lin, iid, split, ParamVector{0.0}, point, 300, 10000 * scale, 7, e);
  });
}
