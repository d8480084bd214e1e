#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace mmedpo {

/// 64-bit FNV-1a. Used to derive per-item seeds from string identifiers.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Deterministic, platform-independent generator.
///
/// Core: xoshiro256** (Blackman & Vigna) with its 256-bit state expanded from
/// the 64-bit seed through SplitMix64. Uniform doubles take the top 53 bits.
/// Gaussian variates use the Box-Muller transform; each transform yields two
/// variates and the second is cached for the following call, so a stream of
/// normals consumes exactly one 64-bit draw per variate.
///
/// Single owner; never share one instance across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1).
    double uniform() noexcept;
    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) noexcept;
    /// Uniform integer on [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;
    /// Standard normal variate.
    double gaussian() noexcept;

    /// Seed for an independent child stream keyed by `key`:
    /// `base ^ fnv1a64(key)` where `base` is this generator's seed.
    std::uint64_t derive_seed(std::string_view key) const noexcept;
    Rng derive(std::string_view key) const noexcept { return Rng(derive_seed(key)); }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
    std::optional<double> spare_;
};

}  // namespace mmedpo
