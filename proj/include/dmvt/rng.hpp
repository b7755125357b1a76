#pragma once

#include <cstdint>
#include <random>

namespace dmvt {

// Deterministic random source. The engine is the standardized mt19937_64, and
// the distributions are implemented here rather than taken from <random>, so a
// given seed produces the same stream on every platform/compiler.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Unbiased integer in [0, n).
    uint64_t uniform_u64(uint64_t n);

    // Standard normal via Box-Muller (no cached spare; two uniforms per draw).
    double normal();
    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Independent sub-stream derived from (seed, stream); lets parallel or
    // per-item work draw from stable streams regardless of consumption order.
    Rng fork(uint64_t stream) const;

  private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace dmvt
