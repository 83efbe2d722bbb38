#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace ocular {

// Deterministic xorshift-family generator. All randomized behavior in the
// project (weight init, shuffles, the synthetic generator) goes through this
// type so that a seed pins results bit-exactly, independent of the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(split_mix(seed ^ 0x9E3779B97F4A7C15ull)) {
        if (state_ == 0) state_ = 0x106689D45497FDB5ull;
    }

    uint64_t next_u64() {
        // xorshift64*
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1Dull;
    }

    // Uniform in [0, 1), 24 bits of mantissa (exact in float and double).
    double next_unit() { return static_cast<double>(next_u64() >> 40) * 0x1p-24; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Uniform integer in [0, n), n >= 1.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Derive an independent stream, e.g. one per generated image.
    static uint64_t split_mix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

private:
    uint64_t state_;
};

// In-place Fisher-Yates shuffle with a pinned generator (std::shuffle is
// implementation-defined and would not reproduce across standard libraries).
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace ocular
