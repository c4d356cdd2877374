#pragma once

#include <array>
#include <cstdint>

namespace fpgame {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every output
/// block is a pure function of (key, counter), so parallel consumers can draw
/// reproducible streams without sharing state.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit Philox4x32(std::uint64_t seed) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    Counter operator()(Counter counter) const noexcept;

private:
    Key key_;
};

/// Uniform double in (0, 1] built from two 32-bit words (53 random bits).
double uniform_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept;

/// Two independent standard normals from one Philox block (Box-Muller).
std::array<double, 2> normal_pair(const Philox4x32& gen, Philox4x32::Counter counter) noexcept;

}  // namespace fpgame
