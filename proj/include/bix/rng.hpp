#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace bix {

// Deterministic counter-free PRNG (splitmix64 core). All randomness in the
// engine flows through named sub-streams derived from one experiment seed, so
// any stage of a run can be reproduced without replaying the stages before it.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1): both endpoints excluded so log() stays finite.
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Box-Muller; consumes two uniforms per call.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Standard Gumbel noise -log(-log(u)), u in (0,1).
    double gumbel() { return -std::log(-std::log(uniform_open())); }

private:
    uint64_t state_;
};

// FNV-1a over a string tag; used to fork named deterministic sub-streams.
inline uint64_t hash_tag(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    Rng r(seed ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
    return r.next_u64();
}

// Sub-stream keyed by (seed, tag, index). Stateless: calling twice with the
// same key yields an identical stream, which is what makes training resumable.
inline Rng sub_rng(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    return Rng(mix_seed(mix_seed(seed, hash_tag(tag)), index));
}

// Gumbel noise source with a test hook: when suppressed, the noise term is
// exactly zero and Gumbel-Softmax degenerates to a plain tempered softmax.
class GumbelRng {
public:
    explicit GumbelRng(Rng rng, bool noise_enabled = true)
        : rng_(rng), noise_enabled_(noise_enabled) {}

    double sample() { return noise_enabled_ ? rng_.gumbel() : 0.0; }

    bool noise_enabled() const { return noise_enabled_; }
    void set_noise_enabled(bool on) { noise_enabled_ = on; }

private:
    Rng rng_;
    bool noise_enabled_;
};

}  // namespace bix
