#pragma once

#include <cstdint>

namespace unfoldseg {

/// splitmix64: the 64-bit mixing generator with increment 0x9E3779B97F4A7C15
/// and the Stafford mix13 finalizer. Chosen over platform RNGs so generated
/// scenes and manifests are bit-identical everywhere.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 mantissa bits.
    double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double range(double lo, double hi) { return lo + (hi - lo) * u01(); }

    int uniform_int(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

    /// Approximate standard normal via the 12-sum of uniforms. Uses only
    /// additions of dyadic rationals, so it is exactly reproducible across
    /// platforms (no libm).
    double gauss() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += u01();
        return s - 6.0;
    }

private:
    std::uint64_t state_;
};

/// Stateless combiner for deriving per-item seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t item) {
    SplitMix64 g(base ^ (0x9E3779B97F4A7C15ULL * (item + 1)));
    return g.next();
}

}  // namespace unfoldseg
