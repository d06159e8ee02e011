#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stem {

/// Deterministic random stream.  Wraps std::mt19937_64 with explicit
/// uniform and gaussian conversions so a seed pins every drawn value;
/// no library-defined distribution objects are involved.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform in [a, b).
    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Standard normal via Box-Muller; the second deviate of each pair is
    /// cached so consecutive calls consume the engine in a fixed pattern.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// splitmix64 finalizer; full-avalanche mix of a 64-bit word.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of the independent child stream `index` of a run seeded with
/// `base_seed`.  The base seed and the counter are combined through the
/// splitmix64 mix so that neighbouring indices give uncorrelated streams;
/// replicate k of a Monte Carlo run always uses replicate_seed(base, k).
inline std::uint64_t replicate_seed(std::uint64_t base_seed, std::uint64_t index) {
    return mix64(base_seed ^ mix64(index));
}

} // namespace stem
