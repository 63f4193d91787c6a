#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "harmonia/error.hpp"
#include "harmonia/kvcache.hpp"
#include "test_support.hpp"

using namespace harmonia;

namespace {

// policy oracle: re-derive every tag from scratch at sequence length T
int k_tag_oracle(size_t t, size_t T, const KvPolicy& p) {
    bool high = t < p.initial_tokens || t + p.local_tokens >= T;
    return high ? p.m_high : p.m_low;
}

int v_tag_oracle(size_t block, size_t num_blocks, const KvPolicy& p) {
    if ((block + 1) * p.group_size <= p.initial_tokens) return p.m_high;
    size_t lb = (p.local_tokens + p.group_size - 1) / p.group_size;
    return (block + lb >= num_blocks) ? p.m_high : p.m_low;
}

HalfMatrix random_rows(test_support::HalfFuzzer& fuzz, size_t rows, size_t cols) {
    HalfMatrix m(rows, cols);
    for (auto& h : m.data()) h = fuzz.next_half();
    return m;
}

} // namespace

TEST_CASE("headline storage figures") {
    // uniform precision, sign+mantissa accounting
    CHECK(uniform_size_fraction(8, false) == 9.0 / 16.0);   // 43.75% reduction
    CHECK(uniform_size_fraction(4, false) == 5.0 / 16.0);   // 31.25% of the original size
    CHECK(1.0 - uniform_size_fraction(8, false) == 0.4375);
    CHECK(1.0 - uniform_size_fraction(4, false) == 0.6875);

    // asymmetric allocation at 4K with exponent amortization
    KvPolicy pol;
    CHECK(mean_bits_per_element(4096, pol) == 5.25);
    double ratio = 16.0 / mean_bits_per_element(4096, pol);
    CHECK(ratio == doctest::Approx(3.0476).epsilon(1e-4));

    HighPrecisionFraction f = high_precision_fraction(4096, pol);
    CHECK(f.fraction == 96.0 / 4096.0);
    CHECK_FALSE(f.all_high);

    CHECK(high_precision_fraction(96, pol).fraction == 1.0);
    CHECK(high_precision_fraction(192, pol).fraction == 0.5);
    CHECK(high_precision_fraction(50, pol).all_high);
}

TEST_CASE("append tags follow the policy simulation oracle") {
    test_support::HalfFuzzer fuzz(10);
    KvPolicy pol; // defaults: 32 initial, 64 local
    const size_t C = 32;
    KvCacheStore cache(C, pol);
    HalfMatrix rows = random_rows(fuzz, 200, C);
    for (size_t t = 0; t < 200; ++t) {
        cache.append_kv(rows.row(t), rows.row(t));
        // every K token matches the from-scratch tag derivation
        size_t T = cache.token_count();
        for (size_t tok = 0; tok < T; ++tok) {
            CHECK(cache.k_tag(tok) == k_tag_oracle(tok, T, pol));
        }
        for (size_t b = 0; b < cache.v_blocks(); ++b) {
            CHECK(cache.v_block_tag(b) == v_tag_oracle(b, cache.v_blocks(), pol));
        }
    }
    // after 200 appends: tokens 0-31 and 136-199 high, 32-135 low
    auto views = cache.read_k(0, 200);
    for (size_t t = 0; t < 200; ++t) {
        int want = (t < 32 || t >= 136) ? 8 : 4;
        CHECK(views[t].mantissa_bits == want);
        for (const BfpGroup& g : views[t].groups) CHECK(g.mantissa_bits() == want);
    }
}

TEST_CASE("demoted K rows equal direct low-precision conversion") {
    test_support::HalfFuzzer fuzz(11);
    KvPolicy pol;
    const size_t C = 32;
    KvCacheStore cache(C, pol);
    HalfMatrix rows = random_rows(fuzz, 150, C);
    for (size_t t = 0; t < 150; ++t) cache.append_kv(rows.row(t), rows.row(t));

    auto views = cache.read_k(0, 150);
    BfpConfig low{pol.group_size, pol.m_low};
    for (size_t t = 32; t + pol.local_tokens < 150; ++t) {
        REQUIRE(views[t].mantissa_bits == pol.m_low);
        BfpGroup direct = convert_group(rows.row(t).subspan(0, 32), low);
        CHECK(views[t].groups[0].bitwise_equal(direct));
    }
}

TEST_CASE("demoted V blocks equal direct low-precision conversion") {
    test_support::HalfFuzzer fuzz(12);
    KvPolicy pol;
    const size_t C = 32;
    KvCacheStore cache(C, pol);
    HalfMatrix rows = random_rows(fuzz, 200, C);
    for (size_t t = 0; t < 200; ++t) cache.append_kv(rows.row(t), rows.row(t));

    VColumnsView v = cache.read_v();
    BfpConfig low{pol.group_size, pol.m_low};
    std::vector<Half> col(32);
    for (size_t b = 0; b < v.blocks.size(); ++b) {
        if (v.block_mantissa_bits[b] != pol.m_low) continue;
        for (size_t c = 0; c < C; ++c) {
            for (size_t i = 0; i < 32; ++i) col[i] = rows(b * 32 + i, c);
            BfpGroup direct = convert_group(std::span<const Half>(col.data(), 32), low);
            CHECK(v.blocks[b][c].bitwise_equal(direct));
        }
    }
    // residual rows stay at high precision
    CHECK(v.residual_len == 200 % 32);
    for (size_t c = 0; c < C && v.residual_len > 0; ++c) {
        CHECK(v.residual[c].mantissa_bits() == pol.m_high);
    }
}

TEST_CASE("closed-form storage equals entry-by-entry accounting for all T") {
    test_support::HalfFuzzer fuzz(13);
    std::vector<KvPolicy> policies;
    policies.push_back(KvPolicy{});
    policies.push_back(KvPolicy{16, 16, 8, 4, 32, true});
    policies.push_back(KvPolicy{0, 32, 8, 4, 32, false});
    policies.push_back(KvPolicy{32, 0, 6, 3, 32, true});
    policies.push_back(KvPolicy{32, 64, 4, 4, 32, true});

    const size_t C = 32;
    for (const KvPolicy& pol : policies) {
        KvCacheStore cache(C, pol);
        HalfMatrix rows = random_rows(fuzz, 170, C);
        for (size_t t = 0; t < 170; ++t) {
            cache.append_kv(rows.row(t), rows.row(t));
            KvStorageBreakdown live = cache.storage_bits();
            KvStorageBreakdown formula = storage_bits_closed_form(cache.token_count(), C, pol);
            CHECK(live.k_bits == formula.k_bits);
            CHECK(live.v_bits == formula.v_bits);
            CHECK(live.total_bits == formula.total_bits);
        }
    }
}

TEST_CASE("read_region tags and stability") {
    test_support::HalfFuzzer fuzz(14);
    KvPolicy pol;
    const size_t C = 32;
    KvCacheStore cache(C, pol);
    HalfMatrix rows = random_rows(fuzz, 150, C);
    for (size_t t = 0; t < 150; ++t) cache.append_kv(rows.row(t), rows.row(t));

    auto initial = cache.read_k(0, 32);
    for (const auto& v : initial) CHECK(v.mantissa_bits == 8);

    // a range spanning the demotion boundary carries mixed tags
    auto mixed = cache.read_k(24, 48);
    CHECK(mixed.front().mantissa_bits == 8);
    CHECK(mixed.back().mantissa_bits == 4);

    // reads have no side effects
    auto again = cache.read_k(24, 48);
    for (size_t i = 0; i < mixed.size(); ++i) {
        CHECK(mixed[i].mantissa_bits == again[i].mantissa_bits);
        for (size_t g = 0; g < mixed[i].groups.size(); ++g) {
            CHECK(mixed[i].groups[g].bitwise_equal(again[i].groups[g]));
        }
    }

    CHECK_THROWS_AS((void)cache.read_k(140, 151), Error);
    std::vector<Half> bad(C + 1);
    CHECK_THROWS_AS(cache.append_kv(bad, bad), Error);
}
