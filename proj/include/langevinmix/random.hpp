#pragma once

#include <cmath>
#include <cstdint>

namespace lmx {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Child key for (parent, index); distinct indices give decorrelated streams.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t index) {
  return mix64(parent ^ mix64(index ^ 0xD1B54A32D192ED03ULL));
}

// Uniform in [0,1) read off a key without consuming a stream.
inline double key_uniform(std::uint64_t key) {
  return static_cast<double>(mix64(key ^ 0x5851F42D4C957F2DULL) >> 11) * 0x1.0p-53;
}

// SplitMix64 counter stream with cached polar normals.
class Substream {
 public:
  Substream() = default;
  explicit Substream(std::uint64_t key) : state_(mix64(key ^ 0xA0761D6478BD642FULL)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix64(state_);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lmx
