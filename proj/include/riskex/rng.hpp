#pragma once

#include <array>
#include <cstdint>

namespace riskex {

/// xoshiro256++ generator with splitmix64 seeding.
///
/// Chosen over the <random> engines because the full generator state is four
/// words, which keeps snapshots byte-exact and portable, and because streams
/// can be derived by mixing (seed, stream) counters so story i sees the same
/// draws regardless of how stories are scheduled across workers.
class Rng {
  public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
    }

    /// Derive an independent stream for (seed, stream index).
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t x = seed;
        std::uint64_t a = splitmix64(x);
        x ^= index * 0x9e3779b97f4a7c15ULL;
        Rng r;
        r.state_[0] = splitmix64(x);
        r.state_[1] = splitmix64(x) ^ a;
        r.state_[2] = splitmix64(x);
        r.state_[3] = splitmix64(x) + (index << 1 | 1);
        return r;
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform draw strictly inside (0,1); safe for inverse-CDF sampling.
    double uniform_open() {
        const std::uint64_t m = next() >> 11; // 53 bits
        return (static_cast<double>(m) + 0.5) * 0x1.0p-53;
    }

    /// Uniform draw in [0,1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    std::array<std::uint64_t, 4> save() const { return state_; }
    void load(const std::array<std::uint64_t, 4>& s) { state_ = s; }

    bool operator==(const Rng&) const = default;

  private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace riskex
