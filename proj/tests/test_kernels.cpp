#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "harmonia/kernels.hpp"
#include "test_support.hpp"

using namespace harmonia::kernels;

// The SIMD backends must match the scalar reference bit for bit on every
// kernel; sizes cross the vector-width boundaries to cover the tails.

namespace {

const Kernels* simd_table() {
    if (!avx2_available()) return nullptr;
    Backend saved = Backend::scalar;
    (void)saved;
    REQUIRE(set_backend(Backend::avx2));
    const Kernels* t = &active();
    REQUIRE(set_backend(Backend::scalar));
    return t;
}

} // namespace

TEST_CASE("scalar and simd kernels agree on conversion primitives") {
    const Kernels* simd = simd_table();
    if (!simd) return; // scalar-only host
    const Kernels& ref = scalar();

    test_support::HalfFuzzer fuzz(1234);
    for (size_t n : {1u, 3u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 32u, 33u, 64u, 100u, 128u}) {
        for (int rep = 0; rep < 200; ++rep) {
            auto bits = fuzz.group_bits(n);
            CHECK(ref.max_field_exponent(bits.data(), n) == simd->max_field_exponent(bits.data(), n));
            CHECK(ref.any_non_finite(bits.data(), n) == simd->any_non_finite(bits.data(), n));

            int e = ref.max_field_exponent(bits.data(), n);
            for (int m : {1, 4, 8, 10}) {
                std::vector<uint16_t> mags_a(n), mags_b(n);
                std::vector<uint8_t> neg_a(n), neg_b(n);
                ref.encode_mantissas(bits.data(), n, e, m, mags_a.data(), neg_a.data());
                simd->encode_mantissas(bits.data(), n, e, m, mags_b.data(), neg_b.data());
                CHECK(std::memcmp(mags_a.data(), mags_b.data(), n * 2) == 0);
                CHECK(std::memcmp(neg_a.data(), neg_b.data(), n) == 0);

                double scale = std::ldexp(1.0, e - (m - 1));
                std::vector<double> d_a(n), d_b(n);
                ref.dequantize_f64(mags_a.data(), neg_a.data(), n, scale, d_a.data());
                simd->dequantize_f64(mags_a.data(), neg_a.data(), n, scale, d_b.data());
                CHECK(std::memcmp(d_a.data(), d_b.data(), n * 8) == 0);

                std::vector<float> f_a(n), f_b(n);
                ref.dequantize_f32(mags_a.data(), neg_a.data(), n, static_cast<float>(scale), f_a.data());
                simd->dequantize_f32(mags_a.data(), neg_a.data(), n, static_cast<float>(scale), f_b.data());
                CHECK(std::memcmp(f_a.data(), f_b.data(), n * 4) == 0);

                std::vector<int16_t> s_a(n), s_b(n);
                ref.apply_signs(mags_a.data(), neg_a.data(), n, s_a.data());
                simd->apply_signs(mags_a.data(), neg_a.data(), n, s_b.data());
                CHECK(std::memcmp(s_a.data(), s_b.data(), n * 2) == 0);
            }
        }
    }
}

TEST_CASE("scalar and simd dot products agree") {
    const Kernels* simd = simd_table();
    if (!simd) return;
    const Kernels& ref = scalar();

    std::mt19937_64 eng(99);
    for (size_t n : {1u, 2u, 15u, 16u, 17u, 32u, 33u, 128u}) {
        for (int rep = 0; rep < 500; ++rep) {
            std::vector<int16_t> a(n), b(n);
            for (size_t i = 0; i < n; ++i) {
                a[i] = static_cast<int16_t>(static_cast<int>(eng() % 2047) - 1023);
                b[i] = static_cast<int16_t>(static_cast<int>(eng() % 2047) - 1023);
            }
            CHECK(ref.dot_i16(a.data(), b.data(), n) == simd->dot_i16(a.data(), b.data(), n));
        }
    }
}

TEST_CASE("non-finite detection hits every lane position") {
    const Kernels* simd = simd_table();
    const Kernels& ref = scalar();
    for (size_t n : {1u, 16u, 33u}) {
        for (size_t pos = 0; pos < n; ++pos) {
            std::vector<uint16_t> bits(n, 0x3C00);
            bits[pos] = (pos % 2) ? 0x7C00 : 0x7E00; // Inf / NaN
            CHECK(ref.any_non_finite(bits.data(), n));
            if (simd) CHECK(simd->any_non_finite(bits.data(), n));
        }
    }
}

TEST_CASE("backend selection reports availability") {
    CHECK(set_backend(Backend::scalar));
    CHECK(std::string(active().name) == "scalar");
    if (avx2_available()) {
        CHECK(set_backend(Backend::avx2));
        CHECK(std::string(active().name) == "avx2");
        CHECK(set_backend(Backend::scalar));
    } else {
        CHECK_FALSE(set_backend(Backend::avx2));
    }
}
