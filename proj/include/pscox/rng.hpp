#pragma once

#include <cmath>
#include <cstdint>

namespace pscox {

// Splittable, cross-platform-stable RNG: xoshiro256** scrambler with splitmix64
// seeding. std::mt19937 + <random> distributions are avoided on purpose — the
// standard does not pin distribution algorithms, and reproducibility across
// toolchains (and across thread counts, via fork()-derived substreams) is part
// of the output contract.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : s_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Derive an independent child stream from (current state, id). Pure: does
    /// not advance this stream, so fork(k) is the same regardless of the order
    /// or number of other forks taken from the same state.
    Rng fork(std::uint64_t id) const {
        std::uint64_t h = s_[0] ^ rotl(s_[1], 17) ^ rotl(s_[2], 31) ^ rotl(s_[3], 47);
        h ^= id * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL;
        Rng child(0);
        for (auto& word : child.s_) word = splitmix64(h);
        return child;
    }

    /// Uniform on the open interval (0,1): centered 2^-53 lattice, so logs of
    /// u and 1-u are always finite.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Exponential with the given rate (mean 1/rate); strictly positive.
    double exponential(double rate) { return -std::log(uniform01()) / rate; }

    /// Standard normal via Box-Muller; the paired deviate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pscox
