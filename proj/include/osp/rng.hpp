#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace osp {

// SplitMix64-based generator. Hand-rolled so streams are bit-identical across
// platforms and standard libraries; all randomness in the project flows from
// one config seed through forks of this type.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    int next_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    bool bernoulli(double p) { return next_double() < p; }

    // Box-Muller; one value per call, the twin is discarded for simplicity.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    // Derive an independent stream for a named purpose. FNV-1a over the label
    // keeps forks stable across runs and platforms.
    Rng fork(std::string_view label) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : label) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        return Rng(state_ ^ h ^ 0x6a09e667f3bcc909ull);
    }

    Rng fork(uint64_t salt) const { return Rng(state_ ^ (salt * 0x9e3779b97f4a7c15ull) ^ 0xbb67ae8584caa73bull); }

private:
    uint64_t state_;
};

}  // namespace osp
