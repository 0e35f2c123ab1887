#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <vector>

#include "langevinmix/engine.hpp"

namespace lmx {

// Replica r runs on keys derived from (seed, r) only, so the parallel and serial
// paths produce bitwise-identical outputs for any thread count.
template <class Fn>
void for_each_replica(std::size_t replicas, Exec exec, Fn&& fn) {
  const auto n = static_cast<std::int64_t>(replicas);
  if (exec == Exec::serial) {
    for (std::int64_t r = 0; r < n; ++r) fn(static_cast<std::size_t>(r));
    return;
  }
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t r = 0; r < n; ++r) {
    try {
      fn(static_cast<std::size_t>(r));
    } catch (...) {
#pragma omp critical(lmx_replica_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::uint64_t replica_key(std::uint64_t seed, std::size_t replica);

// theta_h for each requested horizon; layout [horizon][replica][coord].
std::vector<double> endpoint_ensemble(const ModelSpec& model, const DataStream& stream,
                                      const KernelSetup& setup, const ParamVector& theta0,
                                      const std::vector<std::size_t>& horizons,
                                      std::size_t replicas, std::uint64_t seed, Exec exec);

struct ReplicaSummary {
  double sum = 0.0;       // S_n of the first coordinate
  double half_sum = 0.0;  // S_{floor(n/2)}
  double mean = 0.0;
  double sigma2_batch = 0.0;  // batch-means long-run variance

  bool operator==(const ReplicaSummary&) const = default;
};

std::vector<ReplicaSummary> replica_summaries(const ModelSpec& model, const DataStream& stream,
                                              const KernelSetup& setup, const ParamVector& theta0,
                                              std::size_t n, std::size_t replicas,
                                              std::uint64_t seed, Exec exec,
                                              std::size_t batch_size = 0);

struct CouplingSample {
  std::optional<std::size_t> tau;
  std::optional<std::size_t> first_equal;
  std::size_t small_set_visits = 0;
  bool absorbing = true;

  bool operator==(const CouplingSample&) const = default;
};

std::vector<CouplingSample> coupling_samples(const ModelSpec& model, const DataStream& stream,
                                             const KernelSetup& setup, const ParamVector& theta1,
                                             const Theta2Law& theta2_law, std::size_t horizon,
                                             std::size_t replicas, std::uint64_t seed,
                                             Exec exec);

}  // namespace lmx
