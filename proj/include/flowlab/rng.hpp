#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace flowlab {

// Seeded generator with explicitly stateless draw helpers so that the full
// stream state is exactly the mt19937_64 engine state (std::normal_distribution
// caches a spare variate, which would make checkpointed state incomplete).
class Rng {
public:
    Rng() : Rng(0, 0) {}
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::seed_seq seq{seed, stream ^ 0x9e3779b97f4a7c15ULL};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1). 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps the draw unbiased
    // while consuming a deterministic-per-value number of engine words.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Standard normal via Box-Muller, spare variate discarded.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string to_string() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    static Rng from_string(const std::string& s) {
        Rng r;
        std::istringstream is(s);
        is >> r.engine_;
        if (is.fail()) throw std::runtime_error("Rng::from_string: malformed state");
        return r;
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace flowlab
