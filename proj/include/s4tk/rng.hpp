#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace s4tk {

// Deterministic, platform-independent RNG. All randomness in the toolkit
// flows from one 64-bit seed through named sub-streams, so changing the
// draw order inside one module does not perturb the draws of another.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x5d2f3c1a9e8b7d64ULL)) {}

    // Derive an independent stream keyed by name.
    Rng stream(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
        for (char c : name) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ULL;
        }
        return from_state(state_ ^ mix(h));
    }

    Rng substream(uint64_t idx) const { return from_state(state_ ^ mix(idx * 0x9e3779b97f4a7c15ULL + 1)); }

    uint64_t next_u64() {
        // splitmix64
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // [0, 1)
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    double uniform_f64() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller; consumes two uniforms per call, no cached spare.
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.2831853071795864769f * u2);
    }

    // [0, n)
    int uniform_int(int n) { return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    bool bernoulli(float p) { return uniform() < p; }

    std::vector<float> uniform_vec(size_t n, float lo, float hi) {
        std::vector<float> v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

    std::vector<float> normal_vec(size_t n, float mean = 0.0f, float stddev = 1.0f) {
        std::vector<float> v(n);
        for (auto& x : v) x = mean + stddev * normal();
        return v;
    }

private:
    static Rng from_state(uint64_t raw_state) {
        Rng r(0);
        r.state_ = raw_state;
        return r;
    }

    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    uint64_t state_;
};

} // namespace s4tk
