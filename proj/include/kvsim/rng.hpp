#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace kvsim {

// splitmix64 step, used to derive independent seeds for per-(cell, sequence,
// layer, head) generator streams from one master seed. Stable across runs.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t base, uint64_t a) { return mix_seed(base ^ mix_seed(a)); }

inline uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b) {
    return mix_seed(mix_seed(base, a) ^ mix_seed(b + 0x6a09e667f3bcc909ULL));
}

inline void fill_normal(std::mt19937_64& gen, std::span<double> out) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : out) v = dist(gen);
}

}  // namespace kvsim
