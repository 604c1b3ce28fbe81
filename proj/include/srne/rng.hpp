#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace srne {

/// Seeded random source used everywhere a draw must be reproducible.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard) and
/// derives reals and indices from raw bits, so draws do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Unbiased (rejection on the top zone).
    std::uint64_t index(std::uint64_t n)
    {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t r = 0;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Deterministic sub-seed for stream `k`; independent of how many draws
    /// have been taken from this generator.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t k)
    {
        // splitmix64 finalizer over (seed, k)
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::string state() const
    {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore(const std::string& s)
    {
        std::istringstream is(s);
        is >> engine_;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace srne
