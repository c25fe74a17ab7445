#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lesiontrack {

/// Seedable generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard. The
/// standard distributions are not, so uniform and normal draws are computed here:
/// uniform() takes the top 53 bits of one engine output, normal() is Box-Muller on
/// two uniforms (no caching of the second value).
///
/// Streams: Rng(seed).stream({a, b, ...}) seeds a fresh engine with
/// splitmix64-folded (seed, a, b, ...). Synthesis uses stream tags
/// {instance, stage, purpose} so adding draws to one component never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Independent child generator keyed by `tags`.
    Rng stream(std::initializer_list<std::uint64_t> tags) const;

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] (inclusive).
    int uniform_int(int lo, int hi);
    /// Standard normal.
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// splitmix64 finaliser.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lesiontrack
