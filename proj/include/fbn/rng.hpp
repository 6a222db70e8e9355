#pragma once

#include <cstdint>

namespace fbn {

// Counter-based pseudo-random generator. Every draw is a pure function of
// (seed, counter), so streams replay identically regardless of platform or
// call site, and a stream can be forked without touching the parent.
struct RngState {
    uint64_t seed = 0;
    uint64_t counter = 0;

    explicit RngState(uint64_t s = 0, uint64_t c = 0) : seed(s), counter(c) {}

    uint64_t next_u64() {
        uint64_t z = seed + (++counter) * 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0, n). Multiply-shift; bias is O(2^-64).
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (cosine branch). Consumes exactly two
    // counter ticks per sample so the stream layout is position-independent.
    double next_gaussian();

    // Independent child stream tagged by `stream`; the parent is unaffected.
    RngState fork(uint64_t stream) const {
        uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return RngState(z ^ (z >> 31), 0);
    }
};

} // namespace fbn
