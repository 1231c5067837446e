#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vgsn {

// SplitMix64 stream with Box-Muller normal variates. The generator and the
// transform are frozen so that a seed reproduces the same sequence on every
// platform. Uniforms are built from the top 53 bits, normals are computed in
// double precision and cast at the call site if needed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Modulo bias is negligible for the corpus
    // sizes involved and keeps the sequence trivially portable.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename Seq>
void shuffle(Seq& seq, Rng& rng) {
    for (std::size_t i = seq.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(seq[i - 1], seq[j]);
    }
}

}  // namespace vgsn
