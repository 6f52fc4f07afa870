#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "stnas/common.hpp"

namespace stnas {

// Deterministic splitmix64 stream. Self-contained so that seeded runs are
// bit-identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    i64 uniform_int(i64 n) { return static_cast<i64>(uniform() * static_cast<real>(n)); }

    // Standard normal via Box-Muller; stateless between calls.
    real normal() {
        real u1 = uniform();
        while (u1 <= 0) u1 = uniform();
        real u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool bernoulli(real p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
            i64 j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Independent child stream, e.g. one per clip id.
    Rng split(std::uint64_t stream) const {
        Rng child(state_ ^ (0x632be59bd9b4e019ull + stream * 0x9e3779b97f4a7c15ull));
        child.next_u64();
        return child;
    }

private:
    std::uint64_t state_;
};

}  // namespace stnas
