#pragma once

#include <cstdint>

namespace harmonia {

// IEEE 754 binary16 value carried as its raw bit pattern.
// Decoding is exact; encoding rounds to nearest-even and saturates to the
// largest finite magnitude on overflow (callers observe the flag).
struct Half {
    uint16_t bits = 0;

    static constexpr uint16_t kExpMask = 0x7C00;
    static constexpr uint16_t kFracMask = 0x03FF;
    static constexpr uint16_t kAbsMask = 0x7FFF;
    static constexpr int kBias = 15;
    static constexpr double kMaxFinite = 65504.0;

    constexpr Half() = default;
    constexpr explicit Half(uint16_t b) : bits(b) {}

    static Half from_double(double x, bool* overflowed = nullptr);
    static Half from_float(float x, bool* overflowed = nullptr);

    double to_double() const;
    float to_float() const { return static_cast<float>(to_double()); }

    constexpr bool sign() const { return (bits & 0x8000u) != 0; }
    constexpr int exponent_field() const { return (bits >> 10) & 0x1F; }
    constexpr int fraction() const { return bits & kFracMask; }
    constexpr bool is_finite() const { return exponent_field() != 0x1F; }
    constexpr bool is_nan() const { return exponent_field() == 0x1F && fraction() != 0; }
    constexpr bool is_zero() const { return (bits & kAbsMask) == 0; }

    // Unbiased exponent under the IEEE field convention: subnormals and zeros
    // report -14, the minimum normal exponent.
    constexpr int field_exponent() const {
        int e = exponent_field();
        return (e > 0 ? e : 1) - kBias;
    }

    friend constexpr bool operator==(Half a, Half b) { return a.bits == b.bits; }
};

} // namespace harmonia
