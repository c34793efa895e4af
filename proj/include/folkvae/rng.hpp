#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace folkvae {

// xoshiro256** seeded through splitmix64, with hand-rolled gaussian and
// bounded-int draws. std::shuffle / std::normal_distribution are
// implementation-defined, so every sampling path goes through this class to
// keep seeded runs byte-identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Mixes extra stream identifiers into a fresh seed; used to give every
    // (sample, epoch, song, ...) its own independent deterministic stream.
    static uint64_t mix(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t x = seed;
        uint64_t h = splitmix64(x);
        x ^= a * 0x9e3779b97f4a7c15ull;
        h ^= splitmix64(x);
        x ^= b + 0xd1b54a32d192ed03ull;
        h ^= splitmix64(x);
        x ^= c + 0x8cb92ba72f3d8dd7ull;
        h ^= splitmix64(x);
        return h;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1), 53-bit resolution
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) by rejection.
    uint64_t uniform_int(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            __uint128_t m = __uint128_t(r) * n;
            if (uint64_t(m) >= threshold) return uint64_t(m >> 64);
        }
    }

    // Box-Muller; consumes exactly two uniforms per draw.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> s_{};
};

} // namespace folkvae
