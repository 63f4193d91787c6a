#include "harmonia/half.hpp"

#include <cfenv>
#include <cmath>
#include <limits>

#include "harmonia/error.hpp"

namespace harmonia {

double Half::to_double() const {
    int e = exponent_field();
    int f = fraction();
    double mag;
    if (e == 0x1F) {
        mag = (f != 0) ? std::nan("") : std::numeric_limits<double>::infinity();
    } else if (e == 0) {
        mag = std::ldexp(static_cast<double>(f), -24);
    } else {
        mag = std::ldexp(static_cast<double>(1024 + f), e - 25);
    }
    return sign() ? -mag : mag;
}

Half Half::from_double(double x, bool* overflowed) {
    if (overflowed) *overflowed = false;
    if (std::isnan(x)) raise(Errc::invalid_value, "cannot encode NaN as fp16");

    uint16_t s = std::signbit(x) ? 0x8000u : 0u;
    double ax = std::fabs(x);
    if (ax == 0.0) return Half(s == 0 ? uint16_t(0) : uint16_t(0x8000));

    // 65520 is the midpoint between the largest finite value and the first
    // overflowing one; nearest-even sends it up.
    if (ax >= 65520.0) {
        if (overflowed) *overflowed = true;
        return Half(static_cast<uint16_t>(s | 0x7BFF)); // +-65504
    }

    int e;
    std::frexp(ax, &e); // ax = frac * 2^e, frac in [0.5, 1)
    e -= 1;             // binade exponent: ax in [2^e, 2^(e+1))

    long mant;
    if (e < -14) {
        // subnormal range: quantum 2^-24
        mant = std::lround(std::nearbyint(std::ldexp(ax, 24)));
        if (mant >= 1024) return Half(static_cast<uint16_t>(s | (1u << 10) | 0)); // rounded up to 2^-14
        return Half(static_cast<uint16_t>(s | mant));
    }
    mant = std::lround(std::nearbyint(std::ldexp(ax, 10 - e)));
    if (mant >= 2048) { // rounding carried into the next binade
        mant = 1024;
        e += 1;
    }
    // e <= 15 here; ax < 65520 guarantees no exponent overflow after carry
    return Half(static_cast<uint16_t>(s | ((e + kBias) << 10) | (mant - 1024)));
}

Half Half::from_float(float x, bool* overflowed) { return from_double(static_cast<double>(x), overflowed); }

} // namespace harmonia
