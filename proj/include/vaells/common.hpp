#pragma once

// Shared error types, deterministic random number generation, and small
// numeric helpers used across the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vaells {

// Invalid shapes or mismatched dimensions.
struct dim_error : std::runtime_error {
    explicit dim_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or failed numeric procedures.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user-supplied configuration, files, or arguments.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. All floating-point draws go through explicit integer
// conversions so that a given seed yields the same stream on every platform;
// std::mt19937_64 supplies the underlying bits.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t u64() { return gen_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    // Uniform on the open interval (0, 1); never returns an endpoint.
    double uniform_open() {
        return (static_cast<double>(u64() >> 12) + 0.5) * 0x1.0p-52;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes two draws per call.
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Independent child stream; the same (parent seed, salt) pair always
    // yields the same child.
    Rng fork(uint64_t salt) const {
        return Rng(splitmix64(seed_ ^ splitmix64(salt + 0x632be59bd9b4e019ULL)));
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

inline bool almost_equal(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace vaells
