#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "harmonia/dataflow.hpp"
#include "harmonia/error.hpp"

using namespace harmonia;

TEST_CASE("closed forms match the worked examples") {
    GemmShape s{64, 32, 48, 16, 16};
    CHECK(ema_column_first(s) == 7680); // 3*2048 + 1536
    CHECK(ema_row_first(s) == 8192);    // 4*1536 + 2048

    GemmShape s2{16, 32, 128, 16, 16};
    CHECK(ema_row_first(s2) == 4608);
    CHECK(ema_column_first(s2) == 8192);
}

TEST_CASE("degenerate strips fetch each operand once") {
    GemmShape s{64, 32, 48, 16, 48}; // one column strip
    CHECK(ema_column_first(s) == 64 * 32 + 32 * 48);
    GemmShape s2{64, 32, 48, 64, 16}; // one row strip
    CHECK(ema_row_first(s2) == 32 * 48 + 64 * 32);
}

TEST_CASE("doubling the strip width halves the refetch term") {
    GemmShape narrow{64, 32, 64, 16, 8};
    GemmShape wide{64, 32, 64, 16, 16};
    uint64_t kn = 32 * 64;
    CHECK(ema_column_first(narrow) - kn == 2 * (ema_column_first(wide) - kn));
}

TEST_CASE("choose_policy picks the smaller cost, ties go column-first") {
    GemmShape s{64, 32, 48, 16, 16};
    EmaReport r = choose_policy(s);
    CHECK(r.chosen_policy == DataflowPolicy::column_first);
    CHECK(r.total_elements == 7680);

    GemmShape s2{16, 32, 128, 16, 16};
    EmaReport r2 = choose_policy(s2);
    CHECK(r2.chosen_policy == DataflowPolicy::row_first);
    CHECK(r2.total_elements == 4608);

    // M*K*(N/n - 1) == K*N*(M/m - 1): square case ties exactly
    GemmShape tie{32, 8, 32, 16, 16};
    CHECK(ema_column_first(tie) == ema_row_first(tie));
    CHECK(choose_policy(tie).chosen_policy == DataflowPolicy::column_first);
}

TEST_CASE("trace simulation equals the closed forms on random shapes") {
    std::mt19937_64 eng(321);
    auto pick = [&](uint64_t lo, uint64_t hi) { return lo + eng() % (hi - lo + 1); };
    for (int rep = 0; rep < 1000; ++rep) {
        GemmShape s;
        s.tile_m = pick(1, 8);
        s.tile_n = pick(1, 8);
        s.M = s.tile_m * pick(1, 12);
        s.N = s.tile_n * pick(1, 12);
        s.K = pick(1, 64);
        CHECK(simulate_trace(s, DataflowPolicy::column_first) == ema_column_first(s));
        CHECK(simulate_trace(s, DataflowPolicy::row_first) == ema_row_first(s));
        EmaReport r = choose_policy(s);
        CHECK(r.total_elements == std::min(ema_column_first(s), ema_row_first(s)));
    }
}

TEST_CASE("unit tiles degenerate to full refetch") {
    GemmShape s{8, 16, 24, 1, 1};
    CHECK(simulate_trace(s, DataflowPolicy::column_first) == s.N * s.M * s.K + s.K * s.N);
}

TEST_CASE("larger tiles never increase EMA") {
    GemmShape base{64, 32, 64, 4, 4};
    uint64_t prev_col = ema_column_first(base);
    uint64_t prev_row = ema_row_first(base);
    for (uint64_t t : {8u, 16u, 32u, 64u}) {
        GemmShape s = base;
        s.tile_m = t;
        s.tile_n = t;
        CHECK(ema_column_first(s) <= prev_col);
        CHECK(ema_row_first(s) <= prev_row);
        prev_col = ema_column_first(s);
        prev_row = ema_row_first(s);
    }
}

TEST_CASE("tiling violations are rejected") {
    GemmShape s{10, 4, 10, 3, 2};
    CHECK_THROWS_AS((void)ema_column_first(s), Error);
    GemmShape s2{10, 4, 10, 2, 3};
    CHECK_THROWS_AS((void)ema_row_first(s2), Error);
    GemmShape s3{0, 4, 10, 1, 1};
    CHECK_THROWS_AS((void)choose_policy(s3), Error);
}

TEST_CASE("energy estimate") {
    CHECK(energy_estimate(0.0) == 0.0);
    CHECK(energy_estimate(122880.0) == 479232.0); // 7680 elements * 16 bits * 3.9
    CHECK(energy_estimate(1000.0, 2.0) == 2000.0);
    CHECK_THROWS_AS((void)energy_estimate(-1.0), Error);

    // bit weighting is linear in the per-element width
    GemmShape wide{64, 32, 48, 16, 16, 16.0, 16.0};
    GemmShape slim{64, 32, 48, 16, 16, 5.15625, 16.0}; // m=4 BFP + amortized exponent
    EmaReport rw = choose_policy(wide);
    EmaReport rs = choose_policy(slim);
    CHECK(rs.total_bits < rw.total_bits);
    CHECK(rs.energy_pj == energy_estimate(rs.total_bits));
}
