// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "veggie/tensor.hpp"

namespace veggie {

/// Counter-based deterministic RNG. Every draw is a pure function of
/// (seed, stream, counter), so results do not depend on batch sizes or
/// call interleaving as long as streams are assigned consistently.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), counter_(0) {}

    Rng fork(std::uint64_t substream) const {
        return Rng(seed_, mix(stream_ ^ 0x9e3779b97f4a7c15ull, substream));
    }

    std::uint64_t next_u64() { return mix(mix(seed_, stream_), counter_++); }

    /// Uniform in [0,1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer uniform in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = normal() * stddev;
        return t;
    }

    std::uint64_t seed() const { return seed_; }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over the combined words
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace veggie
