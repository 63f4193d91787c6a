#pragma once

#include <cstddef>
#include <cstdint>

namespace harmonia::kernels {

// Data-parallel inner loops behind the BFP conversion and the integer MAC
// paths. A scalar reference implementation always exists; SIMD variants are
// selected at runtime and must be bit-identical to the reference (that is
// what tests/test_kernels.cpp enforces).
struct Kernels {
    const char* name;

    // max over lanes of (clamp(exponent_field, 1) - 15). Zeros and subnormals
    // contribute -14, so callers need no zero filtering. n >= 1.
    int (*max_field_exponent)(const uint16_t* bits, size_t n);

    // true if any lane has exponent field 31 (Inf or NaN)
    bool (*any_non_finite)(const uint16_t* bits, size_t n);

    // mags[i] = floor(|bits[i]| * 2^(mantissa_bits - 1 - shared_exp)),
    // neg[i] = 1 iff the lane is negative and not -0.
    void (*encode_mantissas)(const uint16_t* bits, size_t n, int shared_exp, int mantissa_bits,
                             uint16_t* mags, uint8_t* neg);

    // out[i] = (neg[i] ? -mags[i] : mags[i]) * scale; scale is a power of two
    // so the products are exact.
    void (*dequantize_f32)(const uint16_t* mags, const uint8_t* neg, size_t n, float scale, float* out);
    void (*dequantize_f64)(const uint16_t* mags, const uint8_t* neg, size_t n, double scale, double* out);

    // out[i] = neg[i] ? -(int16)mags[i] : mags[i]
    void (*apply_signs)(const uint16_t* mags, const uint8_t* neg, size_t n, int16_t* out);

    // exact signed dot product; lanes bounded by |x| <= 1023 and n <= 128 so
    // the result fits int32 with headroom
    int32_t (*dot_i16)(const int16_t* a, const int16_t* b, size_t n);
};

enum class Backend { scalar, avx2 };

const Kernels& scalar();

// Active table. Defaults to the best backend the CPU supports; the
// HARMONIA_KERNELS environment variable ("scalar" or "avx2") overrides it.
const Kernels& active();

// Returns false if the requested backend is unavailable on this machine.
bool set_backend(Backend b);
Backend detect_best();
bool avx2_available();

} // namespace harmonia::kernels
