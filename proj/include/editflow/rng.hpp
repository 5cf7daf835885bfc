// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace editflow {

// Deterministic RNG: mt19937_64 (sequence fixed by the standard) plus
// hand-rolled Box-Muller so normal draws are identical across toolchains.
// std::normal_distribution is implementation-defined and must not be used
// anywhere reproducibility matters.
class Rng {
public:
    Rng() : engine_(0x9e3779b97f4a7c15ULL) {}
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of entropy.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) {
        // Simple rejection-free modulo; bias is negligible for toy-scale n.
        return engine_() % n;
    }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = static_cast<float>(r * std::sin(theta));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(theta));
    }

    // Derive an independent child stream (splitmix64 over the draw).
    Rng child() {
        uint64_t z = next_u64() + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << " " << (have_spare_ ? 1 : 0) << " " << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> engine_ >> flag >> spare_;
        have_spare_ = (flag != 0);
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    float spare_ = 0.0F;
};

} // namespace editflow
