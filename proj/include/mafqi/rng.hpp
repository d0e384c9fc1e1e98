#pragma once

#include <cstdint>
#include <random>

namespace mafqi {

// splitmix64 finalizer; used to derive independent seeds from (seed, index)
// pairs so parallel streams never share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Thin deterministic wrapper over mt19937_64. Draws avoid
// std::uniform_*_distribution so sequences are identical across standard
// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // rejection sampling keeps the draw exactly uniform
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

private:
    std::mt19937_64 engine_;
};

// Factory keeping the root seed available for stream derivation.
class SeedSequence {
public:
    explicit SeedSequence(std::uint64_t root) : root_(root) {}
    std::uint64_t root() const { return root_; }
    std::uint64_t derive(std::uint64_t index) const { return mix_seed(root_, index); }
    Rng stream(std::uint64_t index) const { return Rng(derive(index)); }

private:
    std::uint64_t root_;
};

} // namespace mafqi
