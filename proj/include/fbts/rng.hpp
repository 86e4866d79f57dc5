#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>

namespace fbts {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Absorbs a sequence of 64-bit words into a single key.
inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t word) {
    std::uint64_t s = key ^ (word + 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

/// Counter-keyed random stream (xoshiro256++ seeded via splitmix64).
///
/// Streams are identified by a key derived from caller-supplied words
/// (master seed, iteration, phase tag, sample index, ...). Substreams are
/// derived from the key alone, never from consumed state, so any scheduling
/// of parallel work that derives its own stream per index is reproducible.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(key) { reseed(); }

    static RngStream from_key(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t key = 0x243f6a8885a308d3ULL; // arbitrary nonzero start
        for (std::uint64_t p : parts) key = detail::mix_key(key, p);
        return RngStream(key);
    }

    /// Child stream keyed by (this stream's key, index). Independent of how
    /// much of this stream has been consumed.
    RngStream substream(std::uint64_t index) const {
        return RngStream(detail::mix_key(key_, index + 0x5851f42d4c957f2dULL));
    }

    std::uint64_t key() const { return key_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Unbiased integer in [0, n) via rejection.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller (second value cached).
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        cached_ = radius * std::sin(angle);
        has_cached_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Index drawn from a probability vector by CDF walk. Probabilities are
    /// assumed non-negative; any rounding slack goes to the last entry.
    int categorical(std::span<const double> probs) {
        const double u = uniform01();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    void reseed() {
        std::uint64_t s = key_;
        for (auto& word : s_) word = detail::splitmix64(s);
        has_cached_ = false;
        cached_ = 0.0;
    }

    std::uint64_t key_;
    std::array<std::uint64_t, 4> s_{};
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/// Stream phase tags keep parallel units of work on disjoint keys.
enum class RngPhase : std::uint64_t {
    init_policy = 1,
    rho0_draw = 2,
    rho1_draw = 3,
    rollout_targets = 4,
    tree_search = 5,
    q_estimates = 6,
    baseline_rollouts = 7,
    environment = 8,
    misc = 9,
};

inline RngStream derive_stream(std::uint64_t master_seed, std::uint64_t iteration,
                               RngPhase phase, std::uint64_t index) {
    return RngStream::from_key(
        {master_seed, iteration, static_cast<std::uint64_t>(phase), index});
}

} // namespace fbts
