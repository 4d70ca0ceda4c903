#pragma once

#include <cstdint>
#include <random>

namespace ssps {

// Portable random stream. The standard distributions are implementation
// defined, so every draw here is computed from raw mt19937_64 output to keep
// runs bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent substream derived from (seed, stream id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller; caches the second variate.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ssps
