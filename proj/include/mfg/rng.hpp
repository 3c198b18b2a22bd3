#pragma once

#include <cstdint>
#include <random>

namespace mfg {

/// SplitMix64 mixing step. Used to derive independent seed streams from a
/// master seed: derived = mix(master, index). Stable across platforms.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed stream: hash(master, stream indices). Each level of nesting mixes
/// one more index, so (seed, replication, agent) yields a stream that is
/// independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a) {
    return splitmix64(master ^ splitmix64(a + 0x51a5c3e8ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(master, a), b);
}

/// mt19937_64 is bit-reproducible across conforming implementations, which
/// keeps every sampled path a pure function of its derived seed.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double uniform01(Rng& rng) {
    return std::generate_canonical<double, 53>(rng);
}

inline double normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

/// One coin flip per tree step; true = down branch.
inline bool flip(Rng& rng) { return (rng() >> 32) & 1ULL; }

}  // namespace mfg
