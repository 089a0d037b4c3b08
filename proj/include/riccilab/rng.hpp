#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>

namespace ricci {

namespace detail {

// SplitMix64 finalizer; full avalanche, so hashing (key, counter) gives an
// independent-looking stream per key.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Counter-based random stream. A stream is addressed by (seed, a, b); all
/// draws come from hashing the stream key with an incrementing counter, so
/// substreams can be handed to parallel workers without coordination and a
/// given (seed, a, b) always reproduces the same sequence.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0)
        : key_(detail::mix64(detail::mix64(detail::mix64(seed) ^ a) ^ b)) {}

    CounterRng substream(std::uint64_t a, std::uint64_t b = 0) const {
        return CounterRng(key_, a, b);
    }

    std::uint64_t next_u64() { return detail::mix64(key_ ^ counter_++); }

    /// Uniform in (0, 1); never returns 0 or 1, so logs are safe.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
    }

    double exponential(double rate) {
        if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be > 0");
        return -std::log(uniform()) / rate;
    }

    double normal() {
        const double u = uniform();
        const double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
    }

    /// Index into `weights` (nonnegative, sum `total`) by inverse CDF.
    int discrete(std::span<const double> weights, double total) {
        double u = uniform() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            u -= weights[i];
            if (u <= 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace ricci
