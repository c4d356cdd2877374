#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

namespace fpgame {

/// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
class Fnv1a {
public:
    void update(const void* data, std::size_t size) noexcept {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ull;
        }
    }
    void update(std::string_view text) noexcept { update(text.data(), text.size()); }
    void update(double value) noexcept {
        std::uint64_t bits;
        std::memcpy(&bits, &value, sizeof bits);
        update(&bits, sizeof bits);
    }
    void update(std::uint64_t value) noexcept { update(&value, sizeof value); }

    std::uint64_t digest() const noexcept { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ull;
};

}  // namespace fpgame
