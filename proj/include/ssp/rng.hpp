#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>

namespace ssp {

/// Counter-based 64-bit generator (SplitMix64 finalizer applied to key + counter).
///
/// The output for draw number i depends only on (key, i), so a stream can be
/// reproduced exactly from its seed, and independent streams are obtained by
/// deriving new keys instead of sharing mutable state.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(key_ + (++counter_) * kGolden); }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Samples an index from an (approximately) normalized weight vector.
    /// The last positive-weight index absorbs rounding slack.
    std::size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last = probs.size();
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            acc += probs[i];
            last = i;
            if (u < acc) return i;
        }
        if (last == probs.size()) throw std::invalid_argument("Rng::categorical: no positive weight");
        return last;
    }

    /// Independent stream keyed by this generator's key and `stream`.
    Rng derive(std::uint64_t stream) const {
        Rng r;
        r.key_ = mix(key_ ^ mix(stream + kGolden));
        return r;
    }

    std::uint64_t draws() const { return counter_; }

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace ssp
