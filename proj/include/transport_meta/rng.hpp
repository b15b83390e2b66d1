#pragma once

#include <cstdint>
#include <random>

namespace tmeta {

// SplitMix64 finalizer. Used for seed derivation only.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seed of substream `stream` under master seed `seed`. Substreams are what
// make bootstrap replicates and simulation replicates independent of the
// order or thread in which they run.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Portable generator: std::mt19937_64 has a bit-exact definition in the
// standard, and every distribution below is implemented here instead of via
// <random> distributions (whose algorithms are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(substream_seed(seed, stream));
  }

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer on [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal (Marsaglia polar method).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tmeta
