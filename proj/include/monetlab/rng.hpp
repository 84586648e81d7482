#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace monetlab {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless mix of a seed and a stream tag; used to derive independent streams.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return splitmix64(s);
}

// xoshiro256++ with explicit, serializable state. All draws are defined in
// terms of integer arithmetic so rebuilding from the same seed is bit-exact
// across runs and thread counts.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static Rng split(uint64_t seed, uint64_t stream) { return Rng(mix_seed(seed, stream)); }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, one value per call; no cached state to serialize.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::string state_hex() const {
        char buf[4 * 16 + 1];
        for (int i = 0; i < 4; ++i) std::snprintf(buf + i * 16, 17, "%016llx", (unsigned long long)s_[i]);
        return std::string(buf, 64);
    }

    bool restore_hex(const std::string& hex) {
        if (hex.size() != 64) return false;
        for (int i = 0; i < 4; ++i) {
            uint64_t w = 0;
            for (int c = 0; c < 16; ++c) {
                char h = hex[i * 16 + c];
                uint64_t d;
                if (h >= '0' && h <= '9') d = h - '0';
                else if (h >= 'a' && h <= 'f') d = 10 + h - 'a';
                else return false;
                w = (w << 4) | d;
            }
            s_[i] = w;
        }
        return true;
    }

    bool operator==(const Rng& o) const { return s_ == o.s_; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> s_{};
};

}  // namespace monetlab
