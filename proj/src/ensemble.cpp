#include "langevinmix/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "langevinmix/stats.hpp"

namespace lmx {

namespace {

constexpr std::uint64_t kBurnTag = 3;

}  // namespace

std::uint64_t replica_key(std::uint64_t seed, std::size_t replica) {
  return derive_key(seed ^ 0x243F6A8885A308D3ULL, replica);
}

std::vector<double> endpoint_ensemble(const ModelSpec& model, const DataStream& stream,
                                      const KernelSetup& setup, const ParamVector& theta0,
                                      const std::vector<std::size_t>& horizons,
                                      std::size_t replicas, std::uint64_t seed, Exec exec) {
  if (horizons.empty()) throw EngineError("no horizons requested");
  if (!std::is_sorted(horizons.begin(), horizons.end()))
    throw EngineError("horizons must be sorted");
  if (stream.m() != model.m()) throw EngineError("stream and model dimensions differ");
  const std::size_t d = theta0.size(), m = static_cast<std::size_t>(model.m());
  const std::size_t H = horizons.size();
  std::vector<double> out(H * replicas * d);
  for_each_replica(replicas, exec, [&](std::size_t r) {
    const auto key = replica_key(seed, r);
    auto state = stream.initial_state(env_seed(key));
    const auto root = eps_root(key);
    std::vector<double> theta = theta0.coords, next(d), y(m), scratch(d);
    std::size_t hi = 0;
    auto record = [&](std::size_t t) {
      while (hi < H && horizons[hi] == t) {
        std::copy(theta.begin(), theta.end(), out.begin() + static_cast<std::ptrdiff_t>((hi * replicas + r) * d));
        ++hi;
      }
    };
    record(0);
    for (std::size_t t = 0; hi < H; ++t) {
      stream.advance(state, y);
      keyed_step(model, setup, theta, y, derive_key(root, t), next, scratch);
      theta.swap(next);
      record(t + 1);
    }
  });
  return out;
}

std::vector<ReplicaSummary> replica_summaries(const ModelSpec& model, const DataStream& stream,
                                              const KernelSetup& setup, const ParamVector& theta0,
                                              std::size_t n, std::size_t replicas,
                                              std::uint64_t seed, Exec exec,
                                              std::size_t batch_size) {
  if (n < 4) throw EngineError("replica summaries need n >= 4");
  if (stream.m() != model.m()) throw EngineError("stream and model dimensions differ");
  const std::size_t bs =
      batch_size > 0 ? batch_size : static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t nb = n / bs;
  if (nb < 2) throw EngineError("batch size leaves fewer than two batches");
  const std::size_t d = theta0.size(), m = static_cast<std::size_t>(model.m());
  std::vector<ReplicaSummary> out(replicas);
  for_each_replica(replicas, exec, [&](std::size_t r) {
    const auto key = replica_key(seed, r);
    auto state = stream.initial_state(env_seed(key));
    const auto root = eps_root(key);
    std::vector<double> theta = theta0.coords, next(d), y(m), scratch(d), batches(nb, 0.0);
    NeumaierSum total, half;
    NeumaierSum batch;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = theta[0];
      total.add(x);
      if (k < n / 2) half.add(x);
      const std::size_t b = k / bs;
      if (b < nb) batch.add(x);
      if ((k + 1) % bs == 0 && b < nb) {
        batches[b] = batch.sum() / static_cast<double>(bs);
        batch = NeumaierSum{};
      }
      stream.advance(state, y);
      keyed_step(model, setup, theta, y, derive_key(root, k), next, scratch);
      theta.swap(next);
    }
    ReplicaSummary& s = out[r];
    s.sum = total.sum();
    s.half_sum = half.sum();
    s.mean = s.sum / static_cast<double>(n);
    const double bmean = compensated_mean(batches);
    NeumaierSum ss;
    for (double v : batches) ss.add((v - bmean) * (v - bmean));
    s.sigma2_batch = static_cast<double>(bs) * ss.sum() / static_cast<double>(nb - 1);
  });
  return out;
}

std::vector<CouplingSample> coupling_samples(const ModelSpec& model, const DataStream& stream,
                                             const KernelSetup& setup, const ParamVector& theta1,
                                             const Theta2Law& theta2_law, std::size_t horizon,
                                             std::size_t replicas, std::uint64_t seed,
                                             Exec exec) {
  if (stream.m() != model.m()) throw EngineError("stream and model dimensions differ");
  const std::size_t d = theta1.size(), m = static_cast<std::size_t>(model.m());
  const ParamVector start2 = theta2_law.point.size() == d ? theta2_law.point : theta1;
  const double R = setup.split ? setup.split->R : 0.0;
  const KernelSetup plain{setup.lambda, setup.beta, std::nullopt};
  std::vector<CouplingSample> out(replicas);
  for_each_replica(replicas, exec, [&](std::size_t r) {
    const auto key = replica_key(seed, r);
    auto state = stream.initial_state(env_seed(key));
    std::vector<double> a = theta1.coords, b = start2.coords, na(d), nb(d), y(m), scratch(d);
    if (theta2_law.kind == Theta2Law::Kind::stationary) {
      const auto burn_root = derive_key(key, kBurnTag);
      for (std::size_t t = 0; t < theta2_law.burn_in; ++t) {
        stream.advance(state, y);
        keyed_step(model, plain, b, y, derive_key(burn_root, t), nb, scratch);
        b.swap(nb);
      }
    }
    const auto root = eps_root(key);
    CouplingSample& s = out[r];
    auto check = [&](std::size_t t, bool joint) {
      const bool equal = std::equal(a.begin(), a.end(), b.begin());
      if (equal && !s.first_equal) s.first_equal = t;
      if (!s.tau && joint) s.tau = t;
      if (s.tau) {
        if (!equal) s.absorbing = false;
      } else if (setup.split && norm(a) <= R && norm(b) <= R) {
        ++s.small_set_visits;
      }
    };
    check(0, std::equal(a.begin(), a.end(), b.begin()));
    for (std::size_t t = 0; t < horizon; ++t) {
      stream.advance(state, y);
      const auto k = derive_key(root, t);
      const bool ra = keyed_step(model, setup, a, y, k, na, scratch);
      const bool rb = keyed_step(model, setup, b, y, k, nb, scratch);
      a.swap(na);
      b.swap(nb);
      check(t + 1, ra && rb);
    }
  });
  return out;
}

}  // namespace lmx
