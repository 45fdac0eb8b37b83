// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "pixdit/error.hpp"

namespace pixdit {

// Deterministic RNG. mt19937_64 is bit-exact per the standard; the
// distribution transforms are written out here because the std::
// distributions are not portable across library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. One value per call; the mate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle  = 2.0 * M_PI * u2;
        spare_      = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    // Uniform integer in [0, n), n > 0. Rejection sampling, unbiased.
    uint64_t integer(uint64_t n) {
        if (n == 0) throw InvalidInputError("Rng::integer: n must be positive");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Derive an independent stream (for per-run sub-generators).
    Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> eng_ >> flag >> spare_;
        if (!is) throw StateError("Rng::deserialize: malformed state string");
        have_spare_ = flag != 0;
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_    = 0.0;
};

}  // namespace pixdit
