#pragma once

#include <string>
#include <vector>

#include "harmonia/dataflow.hpp"
#include "harmonia/kvcache.hpp"
#include "harmonia/pe.hpp"
#include "harmonia/rng.hpp"
#include "harmonia/smoothing.hpp"

namespace harmonia {

struct SmoothingSettings {
    bool offline = false;
    bool online = false;
    size_t top_k = 16;
    int calibration_iters = 100;
    size_t calibration_samples = 2;
    bool allow_short_prefill = false;
    ScaleVector scale; // externally calibrated S; empty = calibrate when offline is on
};

struct OutlierSpec {
    std::vector<size_t> channels; // K-projection output channels
    double factor = 64.0;
};

struct ModelConfig {
    size_t hidden = 64;
    size_t heads = 1;
    size_t head_dim = 64;
    size_t ffn_dim = 64;
    size_t prefill_tokens = 64;
    size_t decode_steps = 8;
    BfpConfig bfp{32, 8};
    KvPolicy kv{};
    SmoothingSettings smoothing{};
    OutlierSpec outliers{};
    double input_bias = 1.0; // per-channel mean magnitude of generated inputs
    uint64_t seed = 1;
    uint64_t tile_m = 16, tile_n = 16; // EMA reporting tiles

    void validate() const;
};

struct ToyModel {
    ModelConfig cfg;
    // absorbed real weights, their INT4 quantizations, and the dequantized
    // copies the fp64 shadow path runs on
    Matrix wq, wk, wv, wo, ffn;
    QuantWeights qwq, qwk, qwv, qwo, qffn;
    Matrix wq_deq, wk_deq, wv_deq, wo_deq, ffn_deq;
    ScaleVector scale; // the S that was absorbed
    CalibrationResult calibration; // populated when calibration ran
};

// Deterministic from (cfg, seed): Gaussian weights, outlier channels of the
// K projection scaled by cfg.outliers.factor, offline scale absorbed, then
// group-wise INT4 quantization.
ToyModel build_toy_model(const ModelConfig& cfg);

// Input rows with a per-channel bias component so K channels show the
// intra-channel similarity the online offsets exploit.
Matrix make_inputs(const ModelConfig& cfg, size_t rows, Rng& rng, std::vector<double>* bias_out = nullptr);

// The attention-block objective used by Eq-style scale calibration: the
// candidate path converts Q/K/V activations to BFP (K and V at the cache
// precision) after applying S.
BlockEval make_calibration_block(const Matrix& wq_raw, const Matrix& wk_raw, const Matrix& wv_raw,
                                 const ModelConfig& cfg);

struct LayerError {
    std::string layer;
    double max_scaled = 0.0;
    double mean_scaled = 0.0;
};

struct StepReport {
    std::vector<LayerError> layers;
    double kl_mean = 0.0;
    double kl_max = 0.0;
    double prob_row_sum_dev = 0.0;
    KvStorageBreakdown storage;
    uint64_t ema_elements_a = 0;
    uint64_t ema_elements_b = 0;
    double ema_total_bits = 0.0;
    double ema_energy_pj = 0.0;
    std::string ema_policy; // policy of the largest linear GEMM
    size_t overflow_count = 0;

    double layer_max(const std::string& name) const;
    double layer_mean(const std::string& name) const;
};

// One quantized run with its exact fp64 shadow; decode continues from the
// prefill state.
class PipelineRun {
public:
    explicit PipelineRun(const ToyModel& model);

    StepReport prefill(const Matrix& x);
    StepReport decode_step(std::span<const double> x_row);

    const Matrix& output() const { return output_; }
    const Matrix& shadow_output() const { return shadow_output_; }
    // every final-output row produced so far (prefill rows then decode rows)
    const Matrix& all_outputs() const { return all_outputs_; }
    const Matrix& all_shadow_outputs() const { return all_shadow_outputs_; }
    const KvCacheStore& cache() const { return cache_; }
    const OffsetVector& offsets() const { return offsets_; }
    size_t tokens() const { return cache_.token_count(); }

private:
    const ToyModel& model_;
    KvCacheStore cache_;
    OffsetVector offsets_;
    bool prefilled_ = false;

    Matrix shadow_k_; // exact K history (offsets applied)
    Matrix shadow_v_;

    Matrix output_;
    Matrix shadow_output_;
    Matrix all_outputs_;
    Matrix all_shadow_outputs_;

    StepReport run_rows(const Matrix& x, bool is_prefill);
};

struct RunSummary {
    ToyModel model;
    StepReport prefill;
    std::vector<StepReport> decode;
    Matrix final_output;
    Matrix final_shadow;
    OffsetVector offsets;
    KvStorageBreakdown final_storage;
    double attn_out_mean_err = 0.0; // mean over steps of the attn_out layer error
    double final_mean_err = 0.0;
    // per-element error over every final-output row of the run, normalized by
    // the shadow outputs' max magnitude
    double final_max_err = 0.0;
};

RunSummary run_pipeline(const ModelConfig& cfg);

struct SweepPoint {
    size_t group_size = 0;
    int mantissa_bits = 0;
    ErrorStats k_conversion; // conversion error of the fixed reference K
    double final_max_err = 0.0;
    double final_mean_err = 0.0;
    double kl_mean = 0.0;
};

// One prefill run per grid point plus conversion metrics on a fixed
// fp16-exact K matrix (so the monotonicity trends are exact).
std::vector<SweepPoint> run_sweep(const ModelConfig& base, const std::vector<size_t>& group_sizes,
                                  const std::vector<int>& mantissa_widths);

struct AblationToggles {
    bool asym_alloc = false;
    bool offline_smooth = false;
    bool online_smooth = false;
};

struct AblationRun {
    AblationToggles toggles;
    double attn_out_mean_err = 0.0;
    double final_mean_err = 0.0;
    double calibration_objective = 0.0;
    double calibration_objective_at_ones = 0.0;
    bool calibrated = false;
};

// Paired runs on one seed differing only in the toggles.
std::vector<AblationRun> ablation(const ModelConfig& cfg, const std::vector<AblationToggles>& variants);

ModelConfig apply_toggles(const ModelConfig& cfg, const AblationToggles& t);

} // namespace harmonia
