#pragma once

#include <cmath>
#include <cstdint>

namespace cultivar {

inline uint64_t splitmix64(uint64_t &state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64. Streams for parallel work are derived
// from (master_seed, stream_id) so shot batches are reproducible regardless
// of thread count.
struct Rng {
    uint64_t s[4];

    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL * (stream + 1));
        for (auto &w : s) w = splitmix64(sm);
        if (!(s[0] | s[1] | s[2] | s[3])) s[0] = 1;
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t next() {
        uint64_t result = rotl(s[1] * 5, 7) * 9;
        uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, bound) without modulo bias
    uint64_t below(uint64_t bound) {
        uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Geometric gap between successes of a Bernoulli(p) process: number of
    // failures before the next success. Used to skip over non-firing shots.
    uint64_t geometric_skip(double p) {
        if (p >= 1.0) return 0;
        double u = uniform();
        return uint64_t(std::log1p(-u) / std::log1p(-p));
    }
};

}  // namespace cultivar
