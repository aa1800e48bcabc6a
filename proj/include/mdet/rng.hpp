#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mdet {

// Deterministic draws on top of the raw mt19937_64 bit stream.
// std::uniform_real_distribution and friends are implementation-defined,
// which would break the byte-identical-artifacts guarantee across stdlibs.

inline double uniform_unit(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(g);
}

// Inclusive range. Modulo bias is irrelevant for the spans used here.
inline int uniform_int(std::mt19937_64& g, int lo, int hi) {
    return lo + static_cast<int>(g() % static_cast<uint64_t>(hi - lo + 1));
}

inline double normal(std::mt19937_64& g, double mean, double stddev) {
    double u1 = uniform_unit(g);
    double u2 = uniform_unit(g);
    if (u1 < 1e-300) u1 = 1e-300;
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Decorrelated per-stream generator so (seed, stream) pairs can be handed to
// parallel workers without sharing state.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
    return std::mt19937_64(mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ULL + 1)));
}

}  // namespace mdet
