#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ted {

// Seeded generator whose derived draws do not depend on the standard
// library's distribution implementations, so runs reproduce across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index requires n > 0");
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do x = engine_();
        while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    // Uniform integer in [lo, hi].
    std::size_t between(std::size_t lo, std::size_t hi) {
        if (hi < lo) throw std::invalid_argument("Rng::between requires lo <= hi");
        return lo + index(hi - lo + 1);
    }

    // Box-Muller; the second variate is discarded to keep the stream simple.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    Rng fork() { return Rng(engine_()); }

private:
    std::mt19937_64 engine_;
};

}  // namespace ted
