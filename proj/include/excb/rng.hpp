#pragma once

// Deterministic RNG substreams. Every stochastic piece of the pipeline
// (mixture centers, weight init, per-step batches) draws from its own
// substream keyed by (seed, stream id, index), so results are a pure
// function of the experiment seed. The mt19937_64 engine is fully
// specified by the standard; the value transforms below are hand-rolled
// because the std distributions are implementation-defined.

#include <cmath>
#include <cstdint>
#include <random>

namespace excb {

// splitmix64 finalizer
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : uint64_t {
  mixture_centers = 1,
  batch = 2,
  model_init = 3,
};

inline uint64_t substream_seed(uint64_t seed, Stream stream, uint64_t index = 0) {
  return mix64(mix64(seed ^ (0x517cc1b727220a95ULL * static_cast<uint64_t>(stream))) + index);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  Rng(uint64_t seed, Stream stream, uint64_t index = 0)
      : engine_(substream_seed(seed, stream, index)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in (0, 1]; never zero so it is safe under log()
  double next_unit() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // uniform integer in [0, n); exact via rejection
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  // standard normal, Box-Muller (one value per pair of uniforms)
  double next_normal() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace excb
