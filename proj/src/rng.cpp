#include "dmvt/rng.hpp"

#include <cmath>

namespace dmvt {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t Rng::uniform_u64(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

Rng Rng::fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
}

}  // namespace dmvt
