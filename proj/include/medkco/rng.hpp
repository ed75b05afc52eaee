#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "medkco/errors.hpp"

namespace medkco {

// Seeded random source with a fixed, portable algorithm: xoshiro256** seeded
// through splitmix64. The draw sequence for a given seed is identical across
// platforms and standard libraries, which is what makes "same seed, same run"
// a hard contract. Single consumer; no locking.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        seed_ = seed;
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps the distribution
    // exact for every n.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw contract_error("uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller; both draws consumed even though one
    // value is returned, keeping the stream position input-independent.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Fisher-Yates, descending index order.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i + 1));
            std::swap(items[i], items[j]);
        }
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void restore(std::uint64_t seed, const std::array<std::uint64_t, 4>& state) {
        seed_ = seed;
        state_ = state;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace medkco
