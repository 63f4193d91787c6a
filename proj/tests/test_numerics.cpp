#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "harmonia/bfp.hpp"
#include "harmonia/error.hpp"
#include "harmonia/grouping.hpp"
#include "harmonia/rng.hpp"
#include "oracle_bfp.hpp"
#include "test_support.hpp"

using namespace harmonia;

namespace {

std::vector<Half> halves(std::initializer_list<double> vals) {
    std::vector<Half> out;
    for (double v : vals) out.push_back(Half::from_double(v));
    return out;
}

bool matches_oracle(const BfpGroup& g, const oracle::Group& o) {
    if (g.shared_exp() != o.shared_exp || g.mantissa_bits() != o.mantissa_bits) return false;
    if (g.size() != o.mags.size()) return false;
    for (size_t i = 0; i < o.mags.size(); ++i) {
        if (g.magnitude(i) != o.mags[i] || g.negative(i) != (o.neg[i] != 0)) return false;
    }
    return true;
}

} // namespace

TEST_CASE("convert_group frozen examples") {
    BfpConfig m8{32, 8};
    BfpGroup g = convert_group(std::span<const Half>(halves({1.0})), m8);
    CHECK(g.shared_exp() == 0);
    CHECK(g.magnitude(0) == 128);
    CHECK_FALSE(g.negative(0));
    CHECK(g.dequantize()[0] == 1.0);

    BfpConfig m4{32, 4};
    auto vals = halves({1.5, -0.375, 0.09375, 0.0});
    BfpGroup g2 = convert_group(std::span<const Half>(vals), m4);
    CHECK(g2.shared_exp() == 0);
    CHECK(g2.magnitude(0) == 12);
    CHECK(g2.magnitude(1) == 3);
    CHECK(g2.magnitude(2) == 0);
    CHECK(g2.magnitude(3) == 0);
    CHECK_FALSE(g2.negative(0));
    CHECK(g2.negative(1));
    CHECK_FALSE(g2.negative(2));
    CHECK_FALSE(g2.negative(3));
    auto d = g2.dequantize();
    CHECK(d[0] == 1.5);
    CHECK(d[1] == -0.375);
    CHECK(d[2] == 0.0);
    CHECK(d[3] == 0.0);
}

TEST_CASE("convert_group rejects bad input") {
    BfpConfig cfg{32, 8};
    std::vector<Half> empty;
    CHECK_THROWS_AS((void)convert_group(std::span<const Half>(empty), cfg), Error);

    std::vector<uint16_t> inf = {0x7C00};
    CHECK_THROWS_AS((void)convert_group(std::span<const uint16_t>(inf), cfg), Error);
    std::vector<uint16_t> nan = {0x7E01};
    CHECK_THROWS_AS((void)convert_group(std::span<const uint16_t>(nan), cfg), Error);

    std::vector<Half> too_many(33, Half::from_double(1.0));
    CHECK_THROWS_AS((void)convert_group(std::span<const Half>(too_many), cfg), Error);
}

TEST_CASE("all-zero group uses the minimum exponent") {
    BfpConfig cfg{32, 8};
    std::vector<Half> zeros(8);
    zeros[3] = Half::from_double(-0.0);
    BfpGroup g = convert_group(std::span<const Half>(zeros), cfg);
    CHECK(g.shared_exp() == -14);
    for (size_t i = 0; i < g.size(); ++i) {
        CHECK(g.magnitude(i) == 0);
        CHECK_FALSE(g.negative(i)); // -0 normalizes to +0
    }
}

TEST_CASE("conversion matches the fp64 oracle on random groups") {
    test_support::HalfFuzzer fuzz(2024);
    for (int rep = 0; rep < 2000; ++rep) {
        size_t n = 1 + fuzz.raw() % 32;
        auto bits = fuzz.group_bits(n);
        for (int m : {1, 2, 4, 6, 8, 10}) {
            BfpConfig cfg{32, m};
            BfpGroup got = convert_group(std::span<const uint16_t>(bits), cfg);
            oracle::Group want = oracle::convert(bits, m);
            CHECK(matches_oracle(got, want));

            auto deq = got.dequantize();
            auto deq_want = oracle::dequantize(want);
            for (size_t i = 0; i < n; ++i) CHECK(deq[i] == deq_want[i]);
        }
    }
}

TEST_CASE("reconstruction error bound and max-element fidelity") {
    test_support::HalfFuzzer fuzz(7);
    for (int rep = 0; rep < 2000; ++rep) {
        size_t n = 1 + fuzz.raw() % 32;
        auto bits = fuzz.group_bits(n);
        for (int m : {1, 4, 8, 10}) {
            BfpGroup g = convert_group(std::span<const uint16_t>(bits), BfpConfig{32, m});
            double step = std::ldexp(1.0, g.shared_exp() - (m - 1));
            auto deq = g.dequantize();
            double max_abs = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double x = oracle::decode_fp16(bits[i]);
                CHECK(std::fabs(x - deq[i]) < step);
                // sign preservation on nonzero reconstructions
                if (deq[i] != 0.0) CHECK(std::signbit(deq[i]) == std::signbit(x));
                max_abs = std::max(max_abs, std::fabs(x));
            }
            // a normal max element keeps the top m significand bits, so it
            // reaches at least half scale
            if (max_abs >= 0x1p-14) {
                uint16_t max_mag = 0;
                for (size_t i = 0; i < n; ++i) max_mag = std::max(max_mag, g.magnitude(i));
                CHECK(max_mag >= (1u << (m - 1)));
                CHECK(max_mag < (1u << m));
            }
        }
    }
}

TEST_CASE("max element loses only its low significand bits") {
    test_support::HalfFuzzer fuzz(99);
    for (int rep = 0; rep < 500; ++rep) {
        // a single-element group isolates the max element
        uint16_t b = fuzz.next_bits();
        if ((b & 0x7FFF) == 0 || ((b >> 10) & 31) == 0) continue; // want a normal element
        for (int m : {4, 8, 10}) {
            BfpGroup g = convert_group(std::span<const uint16_t>(&b, 1), BfpConfig{32, m});
            int sig = 1024 + (b & 0x3FF);
            CHECK(g.magnitude(0) == static_cast<uint16_t>(sig >> (11 - m)));
        }
    }
}

TEST_CASE("dequantize frozen examples") {
    std::vector<uint16_t> mags = {128};
    std::vector<uint8_t> neg = {0};
    BfpGroup g = BfpGroup::from_parts(0, 8, mags, neg);
    CHECK(g.dequantize()[0] == 1.0);

    std::vector<uint16_t> mags2 = {8, 4};
    std::vector<uint8_t> neg2 = {0, 1};
    BfpGroup g2 = BfpGroup::from_parts(3, 4, mags2, neg2);
    auto d = g2.dequantize();
    CHECK(d[0] == 8.0);
    CHECK(d[1] == -4.0);
}

TEST_CASE("truncation composes with conversion bitwise") {
    test_support::HalfFuzzer fuzz(55);
    for (int rep = 0; rep < 1000; ++rep) {
        size_t n = 1 + fuzz.raw() % 32;
        auto bits = fuzz.group_bits(n);
        BfpGroup full = convert_group(std::span<const uint16_t>(bits), BfpConfig{32, 8});
        for (int m2 : {1, 2, 4, 7}) {
            BfpGroup trunc = truncate_mantissas(full, m2);
            BfpGroup direct = convert_group(std::span<const uint16_t>(bits), BfpConfig{32, m2});
            CHECK(trunc.bitwise_equal(direct));
        }
    }
}

TEST_CASE("truncate_mantissas frozen example and errors") {
    std::vector<uint16_t> mags = {192};
    std::vector<uint8_t> neg = {0};
    BfpGroup g = BfpGroup::from_parts(0, 8, mags, neg);
    BfpGroup t = truncate_mantissas(g, 4);
    CHECK(t.shared_exp() == 0);
    CHECK(t.mantissa_bits() == 4);
    CHECK(t.magnitude(0) == 12);
    CHECK_THROWS_AS((void)truncate_mantissas(t, 4), Error);
    CHECK_THROWS_AS((void)truncate_mantissas(t, 8), Error);

    // all-zero group stays all-zero at any width
    std::vector<uint16_t> z = {0, 0};
    std::vector<uint8_t> zn = {0, 0};
    BfpGroup gz = BfpGroup::from_parts(-14, 8, z, zn);
    CHECK(truncate_mantissas(gz, 4).magnitude(0) == 0);
    CHECK(truncate_mantissas(gz, 1).magnitude(1) == 0);
}

TEST_CASE("split_mantissa") {
    MantissaHalves h = split_mantissa(true, 51);
    CHECK(h.negative);
    CHECK(h.hi == 3);
    CHECK(h.lo == 3);
    h = split_mantissa(false, 255);
    CHECK(h.hi == 15);
    CHECK(h.lo == 15);
    h = split_mantissa(false, 0);
    CHECK(h.hi == 0);
    CHECK(h.lo == 0);
    CHECK_THROWS_AS((void)split_mantissa(false, 256), Error);
    for (unsigned v = 0; v < 256; ++v) {
        MantissaHalves s = split_mantissa(false, v);
        CHECK(s.hi * 16u + s.lo == v);
    }
}

TEST_CASE("quantization error metrics") {
    // dyadic tensor exactly representable at m bits -> zero error
    Matrix exact(2, 32);
    for (size_t r = 0; r < 2; ++r) {
        for (size_t c = 0; c < 32; ++c) exact(r, c) = (c % 5) * 0.25 * (c % 2 ? -1 : 1);
    }
    ErrorStats e = quantization_error(exact, BfpConfig{32, 8}, GroupingAxis::per_token);
    CHECK(e.mse == 0.0);
    CHECK(e.max_abs == 0.0);

    // mse is non-increasing in mantissa width on fp16-exact data
    Rng rng(42);
    Matrix x = to_real(to_half(rng.gaussian_matrix(16, 128)));
    double prev = 1e300;
    for (int m = 1; m <= 10; ++m) {
        double mse = quantization_error(x, BfpConfig{32, m}, GroupingAxis::per_token).mse;
        CHECK(mse <= prev);
        prev = mse;
    }

    // with injected channel outliers, larger groups hurt
    Matrix outl = rng.gaussian_matrix(16, 128);
    for (size_t r = 0; r < outl.rows(); ++r) outl(r, 17) *= 64.0;
    outl = to_real(to_half(outl));
    double prev_g = -1.0;
    for (size_t g : {16, 32, 64, 128}) {
        double mse = quantization_error(outl, BfpConfig{g, 4}, GroupingAxis::per_token).mse;
        CHECK(mse >= prev_g);
        prev_g = mse;
    }
}

TEST_CASE("determinism: identical input gives identical bits") {
    test_support::HalfFuzzer fuzz(3);
    auto bits = fuzz.group_bits(32);
    BfpGroup a = convert_group(std::span<const uint16_t>(bits), BfpConfig{32, 8});
    BfpGroup b = convert_group(std::span<const uint16_t>(bits), BfpConfig{32, 8});
    CHECK(a.bitwise_equal(b));
}
