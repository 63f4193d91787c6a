// AVX2 + F16C variants of the conversion and dot-product kernels. This TU is
// compiled with -mavx2 -mf16c and only dispatched to after a runtime cpuid
// check, so the rest of the library stays baseline-ISA clean.

#if defined(__AVX2__) && defined(__F16C__)

#include <immintrin.h>

#include <cmath>

#include "harmonia/kernels.hpp"

namespace harmonia::kernels {
namespace {

int max_field_exponent_avx2(const uint16_t* bits, size_t n) {
    const __m256i mask5 = _mm256_set1_epi16(0x1F);
    const __m256i one = _mm256_set1_epi16(1);
    __m256i best = one;
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + i));
        __m256i e = _mm256_and_si256(_mm256_srli_epi16(v, 10), mask5);
        best = _mm256_max_epu16(best, _mm256_max_epu16(e, one));
    }
    alignas(32) uint16_t lanes[16];
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), best);
    int m = 1;
    for (int l = 0; l < 16; ++l) m = lanes[l] > m ? lanes[l] : m;
    for (; i < n; ++i) {
        int e = (bits[i] >> 10) & 0x1F;
        if (e < 1) e = 1;
        if (e > m) m = e;
    }
    return m - 15;
}

bool any_non_finite_avx2(const uint16_t* bits, size_t n) {
    const __m256i expmask = _mm256_set1_epi16(0x7C00);
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + i));
        __m256i e = _mm256_and_si256(v, expmask);
        __m256i hit = _mm256_cmpeq_epi16(e, expmask);
        if (_mm256_movemask_epi8(hit) != 0) return true;
    }
    for (; i < n; ++i) {
        if (((bits[i] >> 10) & 0x1F) == 0x1F) return true;
    }
    return false;
}

void encode_mantissas_avx2(const uint16_t* bits, size_t n, int shared_exp, int mantissa_bits,
                           uint16_t* mags, uint8_t* neg) {
    const float scale = std::ldexp(1.0f, mantissa_bits - 1 - shared_exp);
    const __m256 vscale = _mm256_set1_ps(scale);
    const __m128i absmask = _mm_set1_epi16(0x7FFF);
    const __m128i zero = _mm_setzero_si128();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i h = _mm_loadu_si128(reinterpret_cast<const __m128i*>(bits + i));
        __m128i abs16 = _mm_and_si128(h, absmask);
        // fp16 -> fp32 is exact, as is the power-of-two multiply; cvtt gives
        // the floor for these non-negative values
        __m256 f = _mm256_cvtph_ps(abs16);
        __m256i q = _mm256_cvttps_epi32(_mm256_mul_ps(f, vscale));
        __m128i lo = _mm256_castsi256_si128(q);
        __m128i hi = _mm256_extracti128_si256(q, 1);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(mags + i), _mm_packus_epi32(lo, hi));

        __m128i iszero = _mm_cmpeq_epi16(abs16, zero);
        __m128i sgn = _mm_srli_epi16(h, 15);
        __m128i neg16 = _mm_andnot_si128(iszero, sgn);
        _mm_storel_epi64(reinterpret_cast<__m128i*>(neg + i), _mm_packus_epi16(neg16, zero));
    }
    for (; i < n; ++i) {
        uint16_t b = bits[i];
        uint16_t abs = b & 0x7FFF;
        float v = _cvtsh_ss(abs);
        mags[i] = static_cast<uint16_t>(v * scale);
        neg[i] = static_cast<uint8_t>((b >> 15) & (abs != 0 ? 1 : 0));
    }
}

inline __m256i load_neg_epi32(const uint8_t* neg) {
    __m128i b = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(neg));
    return _mm256_cvtepu8_epi32(b);
}

void dequantize_f32_avx2(const uint16_t* mags, const uint8_t* neg, size_t n, float scale, float* out) {
    const __m256 vscale = _mm256_set1_ps(scale);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i m16 = _mm_loadu_si128(reinterpret_cast<const __m128i*>(mags + i));
        __m256 v = _mm256_mul_ps(_mm256_cvtepi32_ps(_mm256_cvtepu16_epi32(m16)), vscale);
        __m256i signbit = _mm256_slli_epi32(load_neg_epi32(neg + i), 31);
        v = _mm256_or_ps(v, _mm256_castsi256_ps(signbit));
        _mm256_storeu_ps(out + i, v);
    }
    for (; i < n; ++i) {
        float v = static_cast<float>(mags[i]) * scale;
        out[i] = neg[i] ? -v : v;
    }
}

void dequantize_f64_avx2(const uint16_t* mags, const uint8_t* neg, size_t n, double scale, double* out) {
    const __m256d vscale = _mm256_set1_pd(scale);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m128i m16 = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(mags + i));
        __m128i m32 = _mm_cvtepu16_epi32(m16);
        __m256d v = _mm256_mul_pd(_mm256_cvtepi32_pd(m32), vscale);
        __m128i nb = _mm_cvtepu8_epi32(_mm_cvtsi32_si128(*reinterpret_cast<const int*>(neg + i)));
        __m256i sign64 = _mm256_slli_epi64(_mm256_cvtepu32_epi64(nb), 63);
        v = _mm256_or_pd(v, _mm256_castsi256_pd(sign64));
        _mm256_storeu_pd(out + i, v);
    }
    for (; i < n; ++i) {
        double v = static_cast<double>(mags[i]) * scale;
        out[i] = neg[i] ? -v : v;
    }
}

void apply_signs_avx2(const uint16_t* mags, const uint8_t* neg, size_t n, int16_t* out) {
    const __m256i zero = _mm256_setzero_si256();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        __m256i m = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(mags + i));
        __m128i nb = _mm_loadu_si128(reinterpret_cast<const __m128i*>(neg + i));
        __m256i n16 = _mm256_cvtepu8_epi16(nb);
        __m256i mask = _mm256_cmpgt_epi16(n16, zero);
        // two's complement negate where mask is set: (x ^ mask) - mask
        __m256i v = _mm256_sub_epi16(_mm256_xor_si256(m, mask), mask);
        _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + i), v);
    }
    for (; i < n; ++i) {
        int16_t v = static_cast<int16_t>(mags[i]);
        out[i] = neg[i] ? static_cast<int16_t>(-v) : v;
    }
}

int32_t dot_i16_avx2(const int16_t* a, const int16_t* b, size_t n) {
    __m256i acc = _mm256_setzero_si256();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
        __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
        acc = _mm256_add_epi32(acc, _mm256_madd_epi16(va, vb));
    }
    alignas(32) int32_t lanes[8];
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), acc);
    int32_t sum = lanes[0] + lanes[1] + lanes[2] + lanes[3] + lanes[4] + lanes[5] + lanes[6] + lanes[7];
    for (; i < n; ++i) {
        sum += static_cast<int32_t>(a[i]) * static_cast<int32_t>(b[i]);
    }
    return sum;
}

} // namespace

const Kernels& avx2_table() {
    static const Kernels k = {
        "avx2",
        max_field_exponent_avx2,
        any_non_finite_avx2,
        encode_mantissas_avx2,
        dequantize_f32_avx2,
        dequantize_f64_avx2,
        apply_signs_avx2,
        dot_i16_avx2,
    };
    return k;
}

} // namespace harmonia::kernels

#endif // __AVX2__ && __F16C__
