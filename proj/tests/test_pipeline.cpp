#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "harmonia/error.hpp"
#include "harmonia/pipeline.hpp"

using namespace harmonia;

namespace {

ModelConfig small_cfg(uint64_t seed) {
    ModelConfig cfg;
    cfg.hidden = 64;
    cfg.heads = 1;
    cfg.head_dim = 64;
    cfg.ffn_dim = 64;
    cfg.prefill_tokens = 64;
    cfg.decode_steps = 4;
    cfg.seed = seed;
    cfg.input_bias = 0.0;
    return cfg;
}

bool same_weights(const QuantWeights& a, const QuantWeights& b) {
    if (a.in_dim() != b.in_dim() || a.out_dim() != b.out_dim()) return false;
    for (size_t c = 0; c < a.out_dim(); ++c) {
        for (size_t r = 0; r < a.in_dim(); ++r) {
            if (a.q(r, c) != b.q(r, c)) return false;
            if (!(a.scale(r, c) == b.scale(r, c))) return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("build_toy_model is deterministic in the seed") {
    ModelConfig cfg = small_cfg(42);
    ToyModel a = build_toy_model(cfg);
    ToyModel b = build_toy_model(cfg);
    CHECK(a.wq.data() == b.wq.data());
    CHECK(same_weights(a.qwk, b.qwk));

    ToyModel c = build_toy_model(small_cfg(43));
    CHECK(a.wq.data() != c.wq.data());
}

TEST_CASE("ones scale leaves quantized weights unchanged") {
    ModelConfig plain = small_cfg(7);
    ModelConfig scaled = plain;
    scaled.smoothing.offline = true;
    scaled.smoothing.scale.assign(plain.hidden, 1.0);
    ToyModel a = build_toy_model(plain);
    ToyModel b = build_toy_model(scaled);
    CHECK(same_weights(a.qwq, b.qwq));
    CHECK(same_weights(a.qwk, b.qwk));
}

TEST_CASE("outlier injection amplifies the target K channel") {
    ModelConfig cfg = small_cfg(11);
    cfg.outliers.channels = {3};
    cfg.outliers.factor = 64.0;
    cfg.input_bias = 1.0;
    ToyModel m = build_toy_model(cfg);
    Rng rng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);
    Matrix x = make_inputs(cfg, 64, rng);
    Matrix k = matmul(x, m.wk_deq);

    std::vector<double> mags(cfg.hidden, 0.0);
    for (size_t r = 0; r < k.rows(); ++r) {
        for (size_t c = 0; c < k.cols(); ++c) mags[c] = std::max(mags[c], std::fabs(k(r, c)));
    }
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[sorted.size() / 2];
    CHECK(mags[3] >= 8.0 * median);
}

TEST_CASE("prefill accuracy at m=8 matches the shadow path") {
    ModelConfig cfg = small_cfg(1);
    cfg.decode_steps = 0;
    cfg.kv.m_high = 8;
    cfg.kv.m_low = 8;
    RunSummary s = run_pipeline(cfg);
    CHECK(s.final_max_err <= 0x1p-5);
    CHECK(s.prefill.prob_row_sum_dev <= 1e-6);
    CHECK(s.prefill.layer_max("final") <= 0x1p-5);
}

TEST_CASE("offset shift leaves the shadow path invariant end to end") {
    ModelConfig cfg = small_cfg(5);
    cfg.outliers.channels = {9};
    cfg.input_bias = 1.0;
    cfg.smoothing.online = false;
    RunSummary off = run_pipeline(cfg);
    cfg.smoothing.online = true;
    cfg.smoothing.top_k = 8;
    RunSummary on = run_pipeline(cfg);

    // quantized outputs change, the exact path does not (softmax shift
    // invariance carried through the full block)
    REQUIRE(off.final_shadow.rows() == on.final_shadow.rows());
    double worst = 0.0;
    double scale = 0.0;
    for (double v : off.final_shadow.data()) scale = std::max(scale, std::fabs(v));
    for (size_t i = 0; i < off.final_shadow.data().size(); ++i) {
        worst = std::max(worst, std::fabs(off.final_shadow.data()[i] - on.final_shadow.data()[i]));
    }
    CHECK(worst <= 1e-10 * scale);
    for (size_t c : on.offsets.active_channels) {
        CHECK(on.offsets.o[c] != 0.0);
    }
    CHECK(on.offsets.active_channels.count(9) == 1); // the outlier channel is selected
}

TEST_CASE("decode maintains storage accounting and V commits") {
    ModelConfig cfg = small_cfg(3);
    cfg.prefill_tokens = 40; // leaves an 8-row residual
    cfg.decode_steps = 30;   // crosses a commit boundary at T=64
    ToyModel model = build_toy_model(cfg);
    PipelineRun run(model);
    Rng irng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);
    run.prefill(make_inputs(cfg, cfg.prefill_tokens, irng));
    for (size_t s = 0; s < cfg.decode_steps; ++s) {
        Matrix row = make_inputs(cfg, 1, irng);
        StepReport rep = run.decode_step(row.row(0));
        // closed-form equality is asserted inside the pipeline; verify the
        // reported numbers match the policy formula here as well
        KvStorageBreakdown formula =
            storage_bits_closed_form(run.tokens(), cfg.hidden, cfg.kv);
        CHECK(rep.storage.total_bits == formula.total_bits);
    }
    CHECK(run.tokens() == 70);
    CHECK(run.cache().v_blocks() == 2);
    CHECK(run.cache().v_state().residual_rows() == 6);
}

TEST_CASE("coarser KV mantissas never help") {
    ModelConfig cfg = small_cfg(17);
    cfg.prefill_tokens = 160;
    cfg.decode_steps = 4;
    cfg.outliers.channels = {5, 23};
    cfg.input_bias = 1.0;

    cfg.kv.m_low = 8;
    RunSummary high = run_pipeline(cfg);
    cfg.kv.m_low = 4;
    RunSummary low = run_pipeline(cfg);
    CHECK(high.attn_out_mean_err <= low.attn_out_mean_err);
}

TEST_CASE("asymmetric window covers everything on short sequences") {
    ModelConfig cfg = small_cfg(23);
    cfg.prefill_tokens = 80; // below initial + local
    cfg.decode_steps = 0;
    ToyModel model = build_toy_model(cfg);
    PipelineRun run(model);
    Rng irng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);
    run.prefill(make_inputs(cfg, 80, irng));
    for (size_t t = 0; t < 80; ++t) CHECK(run.cache().k_tag(t) == cfg.kv.m_high);
    for (size_t b = 0; b < run.cache().v_blocks(); ++b)
        CHECK(run.cache().v_block_tag(b) == cfg.kv.m_high);
}

TEST_CASE("sweep is monotone in mantissa width and group size") {
    ModelConfig cfg;
    cfg.hidden = 128;
    cfg.heads = 1;
    cfg.head_dim = 128;
    cfg.ffn_dim = 128;
    cfg.prefill_tokens = 48;
    cfg.decode_steps = 0;
    cfg.seed = 9;
    cfg.outliers.channels = {17, 70};
    cfg.outliers.factor = 64.0;
    cfg.input_bias = 1.0;

    std::vector<size_t> groups = {16, 32, 64, 128};
    std::vector<int> widths = {2, 4, 6, 8};
    auto points = run_sweep(cfg, groups, widths);
    REQUIRE(points.size() == groups.size() * widths.size());

    auto at = [&](size_t g, int m) -> const SweepPoint& {
        for (const auto& p : points) {
            if (p.group_size == g && p.mantissa_bits == m) return p;
        }
        FAIL("missing grid point");
        return points[0];
    };
    for (size_t g : groups) {
        for (size_t i = 1; i < widths.size(); ++i) {
            CHECK(at(g, widths[i]).k_conversion.mse <= at(g, widths[i - 1]).k_conversion.mse);
        }
    }
    for (int m : widths) {
        for (size_t i = 1; i < groups.size(); ++i) {
            CHECK(at(groups[i], m).k_conversion.mse >= at(groups[i - 1], m).k_conversion.mse);
        }
    }
}

TEST_CASE("a one-point sweep equals a plain prefill run") {
    ModelConfig cfg = small_cfg(31);
    cfg.decode_steps = 0;
    auto points = run_sweep(cfg, {32}, {8});
    REQUIRE(points.size() == 1);

    ModelConfig direct = cfg;
    direct.smoothing = SmoothingSettings{};
    direct.bfp = BfpConfig{32, 8};
    direct.kv.m_high = 8;
    direct.kv.m_low = 8;
    RunSummary s = run_pipeline(direct);
    CHECK(points[0].final_max_err == s.prefill.layer_max("final"));
    CHECK(points[0].kl_mean == s.prefill.kl_mean);
}

TEST_CASE("ablation bookkeeping and calibration contract") {
    ModelConfig cfg = small_cfg(2);
    cfg.prefill_tokens = 160;
    cfg.decode_steps = 2;
    cfg.outliers.channels = {5, 23};
    cfg.input_bias = 1.0;
    cfg.smoothing.top_k = 4;
    cfg.smoothing.calibration_iters = 20;

    auto runs = ablation(cfg, {{false, false, false}, {true, true, true}});
    REQUIRE(runs.size() == 2);
    CHECK_FALSE(runs[0].calibrated);
    CHECK(runs[1].calibrated);
    CHECK(runs[1].calibration_objective <= runs[1].calibration_objective_at_ones);
    CHECK(runs[1].attn_out_mean_err < runs[0].attn_out_mean_err);
}

TEST_CASE("run is deterministic and config validation catches bad shapes") {
    ModelConfig cfg = small_cfg(77);
    RunSummary a = run_pipeline(cfg);
    RunSummary b = run_pipeline(cfg);
    CHECK(a.final_output.data() == b.final_output.data());
    CHECK(a.final_max_err == b.final_max_err);

    ModelConfig bad = cfg;
    bad.head_dim = 48; // not a multiple of the group size
    bad.hidden = 48;
    CHECK_THROWS_AS((void)build_toy_model(bad), Error);

    ModelConfig bad2 = cfg;
    bad2.smoothing.online = true;
    bad2.prefill_tokens = 16;
    CHECK_THROWS_AS(bad2.validate(), Error);
}
