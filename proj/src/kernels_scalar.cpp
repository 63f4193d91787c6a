#include <cmath>

#include "harmonia/kernels.hpp"

// Reference kernels. Everything here is the ground truth the SIMD variants
// are tested against, so keep the arithmetic obvious.

namespace harmonia::kernels {
namespace {

inline double decode_abs(uint16_t bits) {
    int e = (bits >> 10) & 0x1F;
    int f = bits & 0x3FF;
    if (e == 0) return std::ldexp(static_cast<double>(f), -24);
    return std::ldexp(static_cast<double>(1024 + f), e - 25);
}

int max_field_exponent_scalar(const uint16_t* bits, size_t n) {
    int best = 1;
    for (size_t i = 0; i < n; ++i) {
        int e = (bits[i] >> 10) & 0x1F;
        if (e < 1) e = 1;
        if (e > best) best = e;
    }
    return best - 15;
}

bool any_non_finite_scalar(const uint16_t* bits, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (((bits[i] >> 10) & 0x1F) == 0x1F) return true;
    }
    return false;
}

void encode_mantissas_scalar(const uint16_t* bits, size_t n, int shared_exp, int mantissa_bits,
                             uint16_t* mags, uint8_t* neg) {
    // |v| * 2^(m-1-E) is an 11-bit significand times a power of two, so the
    // product is exact and truncation is the only rounding.
    const double scale = std::ldexp(1.0, mantissa_bits - 1 - shared_exp);
    for (size_t i = 0; i < n; ++i) {
        uint16_t b = bits[i];
        uint16_t abs = b & 0x7FFF;
        mags[i] = static_cast<uint16_t>(decode_abs(b) * scale);
        neg[i] = static_cast<uint8_t>((b >> 15) & (abs != 0 ? 1 : 0));
    }
}

void dequantize_f32_scalar(const uint16_t* mags, const uint8_t* neg, size_t n, float scale, float* out) {
    for (size_t i = 0; i < n; ++i) {
        float v = static_cast<float>(mags[i]) * scale;
        out[i] = neg[i] ? -v : v;
    }
}

void dequantize_f64_scalar(const uint16_t* mags, const uint8_t* neg, size_t n, double scale, double* out) {
    for (size_t i = 0; i < n; ++i) {
        double v = static_cast<double>(mags[i]) * scale;
        out[i] = neg[i] ? -v : v;
    }
}

void apply_signs_scalar(const uint16_t* mags, const uint8_t* neg, size_t n, int16_t* out) {
    for (size_t i = 0; i < n; ++i) {
        int16_t v = static_cast<int16_t>(mags[i]);
        out[i] = neg[i] ? static_cast<int16_t>(-v) : v;
    }
}

int32_t dot_i16_scalar(const int16_t* a, const int16_t* b, size_t n) {
    int32_t acc = 0;
    for (size_t i = 0; i < n; ++i) {
        acc += static_cast<int32_t>(a[i]) * static_cast<int32_t>(b[i]);
    }
    return acc;
}

} // namespace

const Kernels& scalar() {
    static const Kernels k = {
        "scalar",
        max_field_exponent_scalar,
        any_non_finite_scalar,
        encode_mantissas_scalar,
        dequantize_f32_scalar,
        dequantize_f64_scalar,
        apply_signs_scalar,
        dot_i16_scalar,
    };
    return k;
}

} // namespace harmonia::kernels
