#include "harmonia/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "harmonia/error.hpp"
#include "harmonia/rng.hpp"

namespace harmonia {

namespace {

constexpr uint64_t kBiasSalt = 0x9E3779B97F4A7C15ull;
constexpr uint64_t kInputSalt = 0xC2B2AE3D27D4EB4Full;
constexpr uint64_t kCalibSalt = 0x165667B19E3779F9ull;

std::vector<double> channel_bias(const ModelConfig& cfg) {
    Rng rng(cfg.seed ^ kBiasSalt);
    std::vector<double> bias(cfg.hidden);
    for (auto& b : bias) b = cfg.input_bias * rng.gaussian();
    return bias;
}

// Start outlier channels at sqrt(median/magnitude), clamped to [2^-6, 1];
// everything else starts at 1.
ScaleVector magnitude_init(const std::vector<double>& mag, const std::vector<size_t>& flagged) {
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    double median = std::max(sorted[sorted.size() / 2], 1e-12);
    ScaleVector init(mag.size(), 1.0);
    for (size_t c : flagged) {
        if (mag[c] <= median) continue;
        init[c] = std::clamp(std::sqrt(median / mag[c]), 1.0 / 64.0, 1.0);
    }
    return init;
}

// The scale sweep only visits channels whose K magnitude stands out; moving
// clean channels trades calibration-set noise against deployment error.
std::vector<size_t> outlier_channel_order(const std::vector<double>& mag) {
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[sorted.size() / 2];
    double threshold = 8.0 * std::max(median, 1e-12);
    std::vector<size_t> order;
    for (size_t c = 0; c < mag.size(); ++c) {
        if (mag[c] >= threshold) order.push_back(c);
    }
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return mag[a] > mag[b]; });
    if (order.empty()) {
        order.resize(mag.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return mag[a] > mag[b]; });
    }
    return order;
}

double kl_divergence(std::span<const double> ref, std::span<const double> got) {
    double kl = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        if (ref[i] <= 0.0) continue;
        double q = std::max(got[i], 1e-12);
        kl += ref[i] * std::log(ref[i] / q);
    }
    return kl;
}

uint64_t largest_divisor_leq(uint64_t n, uint64_t cap) {
    cap = std::min(cap, n);
    for (uint64_t d = cap; d >= 1; --d) {
        if (n % d == 0) return d;
    }
    return 1;
}

} // namespace

void ModelConfig::validate() const {
    bfp.validate();
    kv.validate();
    if (hidden == 0 || heads == 0 || head_dim == 0 || ffn_dim == 0)
        raise(Errc::invalid_argument, "ModelConfig: zero dimension");
    if (heads * head_dim != hidden) raise(Errc::shape, "ModelConfig: hidden != heads * head_dim");
    if (head_dim % bfp.group_size != 0)
        raise(Errc::layout, "ModelConfig: head_dim must be a multiple of the group size");
    if (ffn_dim % bfp.group_size != 0)
        raise(Errc::layout, "ModelConfig: ffn_dim must be a multiple of the group size");
    if (kv.group_size != bfp.group_size)
        raise(Errc::layout, "ModelConfig: cache and activation group sizes must agree");
    for (size_t c : outliers.channels) {
        if (c >= hidden) raise(Errc::invalid_argument, "ModelConfig: outlier channel out of range");
    }
    if (smoothing.online && !smoothing.allow_short_prefill && prefill_tokens < 32)
        raise(Errc::shape, "ModelConfig: online smoothing needs a 32-token prefill window");
}

Matrix make_inputs(const ModelConfig& cfg, size_t rows, Rng& rng, std::vector<double>* bias_out) {
    std::vector<double> bias = channel_bias(cfg);
    if (bias_out) *bias_out = bias;
    Matrix x(rows, cfg.hidden);
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cfg.hidden; ++c) {
            x(r, c) = bias[c] + 0.5 * rng.gaussian();
        }
    }
    return x;
}

namespace {

// converts K per token and V per channel with the policy's precision tags, so
// the calibration objective sees the cache exactly as it would be stored
Matrix convert_k_with_policy(const Matrix& k, const BfpConfig& base, const KvPolicy& kv) {
    const size_t T = k.rows();
    Matrix out(T, k.cols());
    HalfMatrix kh = to_half(k);
    std::vector<double> buf(base.group_size);
    for (size_t t = 0; t < T; ++t) {
        BfpConfig cfg{base.group_size, policy_k_tag(t, T, kv)};
        for (size_t j = 0; j < k.cols() / base.group_size; ++j) {
            BfpGroup g = convert_group(kh.row(t).subspan(j * base.group_size, base.group_size), cfg);
            g.dequantize_into(std::span<double>(buf.data(), g.size()));
            for (size_t i = 0; i < g.size(); ++i) out(t, j * base.group_size + i) = buf[i];
        }
    }
    return out;
}

Matrix convert_v_with_policy(const Matrix& v, const BfpConfig& base, const KvPolicy& kv) {
    const size_t T = v.rows();
    const size_t g = base.group_size;
    const size_t blocks = T / g;
    Matrix out(T, v.cols());
    HalfMatrix vh = to_half(v);
    std::vector<Half> col(g);
    std::vector<double> buf(g);
    for (size_t b = 0; b < blocks; ++b) {
        BfpConfig cfg{g, policy_v_tag(b, blocks, kv)};
        for (size_t c = 0; c < v.cols(); ++c) {
            for (size_t i = 0; i < g; ++i) col[i] = vh(b * g + i, c);
            BfpGroup grp = convert_group(std::span<const Half>(col.data(), g), cfg);
            grp.dequantize_into(std::span<double>(buf.data(), g));
            for (size_t i = 0; i < g; ++i) out(b * g + i, c) = buf[i];
        }
    }
    if (T % g != 0) {
        BfpConfig cfg{g, kv.m_high};
        size_t base_row = blocks * g;
        size_t r = T % g;
        for (size_t c = 0; c < v.cols(); ++c) {
            for (size_t i = 0; i < r; ++i) col[i] = vh(base_row + i, c);
            BfpGroup grp = convert_group(std::span<const Half>(col.data(), r), cfg);
            grp.dequantize_into(std::span<double>(buf.data(), r));
            for (size_t i = 0; i < r; ++i) out(base_row + i, c) = buf[i];
        }
    }
    return out;
}

} // namespace

BlockEval make_calibration_block(const Matrix& wq_raw, const Matrix& wk_raw, const Matrix& wv_raw,
                                 const ModelConfig& cfg) {
    const size_t heads = cfg.heads;
    const size_t d = cfg.head_dim;
    const BfpConfig act_cfg = cfg.bfp;
    const KvPolicy kv = cfg.kv;
    Matrix wq = wq_raw, wk = wk_raw, wv = wv_raw;

    // the objective deliberately excludes the online offsets: the offline
    // scale is learned first, online smoothing stabilizes the amplified
    // channels at runtime
    return [=](const Matrix& x, const ScaleVector& s, bool bfp_on) -> Matrix {
        Matrix q = matmul(x, wq);
        Matrix k = matmul(x, wk);
        Matrix v = matmul(x, wv);
        apply_scale_qk(q, k, s);
        if (bfp_on) {
            q = group_tensor(q, GroupingAxis::per_token, act_cfg).dequantize();
            k = convert_k_with_policy(k, act_cfg, kv);
            v = convert_v_with_policy(v, act_cfg, kv);
        }
        const size_t t_count = x.rows();
        Matrix context(t_count, heads * d);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> row(t_count);
        for (size_t h = 0; h < heads; ++h) {
            for (size_t i = 0; i < t_count; ++i) {
                size_t valid = i + 1;
                double mx = -1e300;
                for (size_t j = 0; j < valid; ++j) {
                    double dot = 0.0;
                    for (size_t c = 0; c < d; ++c) dot += q(i, h * d + c) * k(j, h * d + c);
                    row[j] = dot * inv_sqrt_d;
                    mx = std::max(mx, row[j]);
                }
                double sum = 0.0;
                for (size_t j = 0; j < valid; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (size_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (size_t j = 0; j < valid; ++j) acc += (row[j] / sum) * v(j, h * d + c);
                    context(i, h * d + c) = acc;
                }
            }
        }
        return context;
    };
}

ToyModel build_toy_model(const ModelConfig& cfg) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;

    const size_t C = cfg.hidden;
    const double sw = 1.0 / std::sqrt(static_cast<double>(C));
    Rng wrng(cfg.seed);
    m.wq = wrng.gaussian_matrix(C, C, sw);
    m.wk = wrng.gaussian_matrix(C, C, sw);
    m.wv = wrng.gaussian_matrix(C, C, sw);
    m.wo = wrng.gaussian_matrix(C, C, sw);
    m.ffn = wrng.gaussian_matrix(C, cfg.ffn_dim, sw);

    for (size_t c : cfg.outliers.channels) {
        for (size_t r = 0; r < C; ++r) m.wk(r, c) *= cfg.outliers.factor;
    }

    m.scale.assign(C, 1.0);
    if (cfg.smoothing.offline) {
        if (!cfg.smoothing.scale.empty()) {
            if (cfg.smoothing.scale.size() != C) raise(Errc::shape, "offline scale width mismatch");
            m.scale = cfg.smoothing.scale;
        } else {
            Rng crng(cfg.seed ^ kCalibSalt);
            // samples long enough that the policy's low-precision region is
            // part of the objective
            size_t sample_rows = std::max<size_t>(32, std::min<size_t>(cfg.prefill_tokens, 128));
            std::vector<Matrix> samples;
            for (size_t i = 0; i < std::max<size_t>(1, cfg.smoothing.calibration_samples); ++i) {
                samples.push_back(make_inputs(cfg, sample_rows, crng));
            }
            // visit channels in descending K magnitude so outliers are probed
            // early in the coordinate sweep
            std::vector<double> mag(C, 0.0);
            for (const Matrix& x : samples) {
                Matrix k = matmul(x, m.wk);
                for (size_t r = 0; r < k.rows(); ++r) {
                    for (size_t c = 0; c < C; ++c) mag[c] = std::max(mag[c], std::fabs(k(r, c)));
                }
            }
            CalibrationConfig cal_cfg;
            cal_cfg.iterations = cfg.smoothing.calibration_iters;
            cal_cfg.channel_order = outlier_channel_order(mag);
            // magnitude-balanced starting point: outlier channels begin
            // pre-shrunk toward the median so the descent refines inside the
            // right basin (co-grouped outliers trap a ones start)
            cal_cfg.init = magnitude_init(mag, cal_cfg.channel_order);
            m.calibration =
                calibrate_scale(make_calibration_block(m.wq, m.wk, m.wv, cfg), samples, C, cal_cfg);
            m.scale = m.calibration.scale;
        }
    }

    absorb_scale(m.wq, m.wk, m.scale);

    m.qwq = quantize_weights(m.wq);
    m.qwk = quantize_weights(m.wk);
    m.qwv = quantize_weights(m.wv);
    m.qwo = quantize_weights(m.wo);
    m.qffn = quantize_weights(m.ffn);

    m.wq_deq = m.qwq.dequantize();
    m.wk_deq = m.qwk.dequantize();
    m.wv_deq = m.qwv.dequantize();
    m.wo_deq = m.qwo.dequantize();
    m.ffn_deq = m.qffn.dequantize();
    return m;
}

double StepReport::layer_max(const std::string& name) const {
    for (const LayerError& l : layers) {
        if (l.layer == name) return l.max_scaled;
    }
    raise(Errc::invalid_argument, "unknown layer: " + name);
}

double StepReport::layer_mean(const std::string& name) const {
    for (const LayerError& l : layers) {
        if (l.layer == name) return l.mean_scaled;
    }
    raise(Errc::invalid_argument, "unknown layer: " + name);
}

PipelineRun::PipelineRun(const ToyModel& model)
    : model_(model), cache_(model.cfg.hidden, model.cfg.kv) {
    offsets_.o.assign(model.cfg.hidden, 0.0);
    shadow_k_ = Matrix(0, model.cfg.hidden);
    shadow_v_ = Matrix(0, model.cfg.hidden);
    all_outputs_ = Matrix(0, model.cfg.ffn_dim);
    all_shadow_outputs_ = Matrix(0, model.cfg.ffn_dim);
}

namespace {

void append_rows(Matrix& dst, const Matrix& rows) {
    Matrix merged(dst.rows() + rows.rows(), rows.cols());
    for (size_t r = 0; r < dst.rows(); ++r) {
        for (size_t c = 0; c < dst.cols(); ++c) merged(r, c) = dst(r, c);
    }
    for (size_t r = 0; r < rows.rows(); ++r) {
        for (size_t c = 0; c < rows.cols(); ++c) merged(dst.rows() + r, c) = rows(r, c);
    }
    dst = std::move(merged);
}

} // namespace

StepReport PipelineRun::prefill(const Matrix& x) {
    if (prefilled_) raise(Errc::invalid_argument, "prefill may run only once");
    if (model_.cfg.smoothing.online && !model_.cfg.smoothing.allow_short_prefill && x.rows() < 32)
        raise(Errc::shape, "online smoothing needs at least 32 prefill tokens");
    StepReport rep = run_rows(x, true);
    prefilled_ = true;
    return rep;
}

StepReport PipelineRun::decode_step(std::span<const double> x_row) {
    if (!prefilled_) raise(Errc::invalid_argument, "decode_step before prefill");
    if (x_row.size() != model_.cfg.hidden) raise(Errc::shape, "decode_step: row width mismatch");
    Matrix x(1, model_.cfg.hidden);
    for (size_t c = 0; c < x_row.size(); ++c) x(0, c) = x_row[c];
    return run_rows(x, false);
}

StepReport PipelineRun::run_rows(const Matrix& x, bool is_prefill) {
    const ModelConfig& cfg = model_.cfg;
    const size_t C = cfg.hidden;
    const size_t heads = cfg.heads;
    const size_t d = cfg.head_dim;
    const size_t g = cfg.bfp.group_size;
    const size_t n_new = x.rows();
    const size_t base = cache_.token_count();
    if (x.cols() != C) raise(Errc::shape, "pipeline: input width mismatch");

    StepReport rep;
    size_t overflow = 0;

    // ---- projections (quant path) ----
    BfpTensor xb = group_tensor(x, GroupingAxis::per_token, cfg.bfp);
    GemmResult qres = gemm(xb, model_.qwq);
    GemmResult kres = gemm(xb, model_.qwk);
    GemmResult vres = gemm(xb, model_.qwv);
    overflow += qres.overflow_count + kres.overflow_count + vres.overflow_count;

    // ---- projections (fp64 shadow on dequantized weights) ----
    Matrix qs = matmul(x, model_.wq_deq);
    Matrix ks = matmul(x, model_.wk_deq);
    Matrix vs = matmul(x, model_.wv_deq);

    // ---- online offsets from the first 32 K rows -----
    HalfMatrix kh = to_half(kres.out);
    if (is_prefill && cfg.smoothing.online) {
        size_t window = std::min<size_t>(32, kh.rows());
        Matrix kw(window, C);
        for (size_t r = 0; r < window; ++r) {
            for (size_t c = 0; c < C; ++c) kw(r, c) = kh(r, c).to_double();
        }
        offsets_ = compute_online_offsets(kw, cfg.smoothing.top_k, cfg.smoothing.allow_short_prefill);
    }
    // K rows are shifted before caching; the quantized path re-rounds to fp16
    Matrix k_shifted(n_new, C);
    for (size_t r = 0; r < n_new; ++r) {
        for (size_t c = 0; c < C; ++c) k_shifted(r, c) = kh(r, c).to_double() - offsets_.o[c];
    }
    kh = to_half(k_shifted);
    Matrix ks_shifted = apply_offsets(ks, offsets_);

    // ---- cache append ----
    HalfMatrix vh = to_half(vres.out);
    for (size_t r = 0; r < n_new; ++r) {
        cache_.append_kv(kh.row(r), vh.row(r));
    }
    append_rows(shadow_k_, ks_shifted);
    append_rows(shadow_v_, vs);

    const size_t t_total = cache_.token_count();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // storage accounting must agree with the policy closed form at any T
    KvStorageBreakdown live = cache_.storage_bits();
    KvStorageBreakdown formula = storage_bits_closed_form(t_total, C, cfg.kv);
    if (live.total_bits != formula.total_bits)
        raise(Errc::invariant, "kv storage accounting diverged from the closed form");
    rep.storage = live;

    // ---- attention ----
    Matrix context(n_new, C);
    Matrix context_s(n_new, C);
    double kl_sum = 0.0, kl_max = 0.0;
    size_t kl_rows = 0;
    double row_dev = 0.0;

    auto k_views = cache_.read_k(0, t_total);
    VColumnsView v_view = cache_.read_v();
    const size_t groups_per_head = d / g;

    HalfMatrix qh = to_half(qres.out);
    Matrix q_real = to_real(qh);

    for (size_t h = 0; h < heads; ++h) {
        // per-head Q slice converts to the same bits as the matching groups
        // of a full-row conversion
        Matrix q_slice(n_new, d);
        for (size_t r = 0; r < n_new; ++r) {
            for (size_t c = 0; c < d; ++c) q_slice(r, c) = q_real(r, h * d + c);
        }
        BfpTensor qb = group_tensor(q_slice, GroupingAxis::per_token, cfg.bfp);

        std::vector<GroupRowView> k_rows(t_total);
        for (size_t j = 0; j < t_total; ++j) {
            k_rows[j] = GroupRowView{k_views[j].groups.subspan(h * groups_per_head, groups_per_head),
                                     k_views[j].mantissa_bits};
        }
        GemmResult sres = gemm_scores(qb, k_rows);
        overflow += sres.overflow_count;

        // fp32 softmax over the causal prefix
        Matrix probs(n_new, t_total);
        Matrix probs_s(n_new, t_total);
        std::vector<float> work(t_total);
        for (size_t i = 0; i < n_new; ++i) {
            size_t valid = is_prefill ? base + i + 1 : t_total;
            float mx = -std::numeric_limits<float>::infinity();
            for (size_t j = 0; j < valid; ++j) {
                work[j] = static_cast<float>(sres.out(i, j)) * static_cast<float>(inv_sqrt_d);
                mx = std::max(mx, work[j]);
            }
            float sum = 0.0f;
            for (size_t j = 0; j < valid; ++j) {
                work[j] = std::exp(work[j] - mx);
                sum += work[j];
            }
            float check = 0.0f;
            for (size_t j = 0; j < valid; ++j) {
                float p = work[j] / sum;
                probs(i, j) = static_cast<double>(p);
                check += p;
            }
            row_dev = std::max(row_dev, std::fabs(static_cast<double>(check) - 1.0));

            // shadow softmax in double
            double mxd = -1e300;
            std::vector<double> sc(valid);
            for (size_t j = 0; j < valid; ++j) {
                double dot = 0.0;
                for (size_t c = 0; c < d; ++c) dot += qs(i, h * d + c) * shadow_k_(j, h * d + c);
                sc[j] = dot * inv_sqrt_d;
                mxd = std::max(mxd, sc[j]);
            }
            double sumd = 0.0;
            for (size_t j = 0; j < valid; ++j) {
                sc[j] = std::exp(sc[j] - mxd);
                sumd += sc[j];
            }
            for (size_t j = 0; j < valid; ++j) probs_s(i, j) = sc[j] / sumd;

            double kl = kl_divergence({&probs_s(i, 0), valid}, {&probs(i, 0), valid});
            kl_sum += kl;
            kl_max = std::max(kl_max, kl);
            kl_rows += 1;
        }

        // probabilities re-enter BFP along the key axis (full groups plus a
        // residual group when T is not group aligned)
        HalfMatrix ph = to_half(probs);
        size_t full_blocks = t_total / g;
        size_t residual = t_total % g;
        std::vector<std::vector<BfpGroup>> p_groups(n_new);
        std::vector<GroupRowView> p_rows(n_new);
        for (size_t i = 0; i < n_new; ++i) {
            auto row16 = ph.row(i);
            p_groups[i].reserve(full_blocks + (residual ? 1 : 0));
            for (size_t b = 0; b < full_blocks; ++b) {
                p_groups[i].push_back(convert_group(row16.subspan(b * g, g), cfg.bfp));
            }
            if (residual) {
                p_groups[i].push_back(convert_group(row16.subspan(full_blocks * g, residual), cfg.bfp));
            }
            p_rows[i] = GroupRowView{{p_groups[i].data(), p_groups[i].size()}, cfg.bfp.mantissa_bits};
        }

        VColumnsView v_slice;
        v_slice.blocks.reserve(v_view.blocks.size());
        for (auto blk : v_view.blocks) v_slice.blocks.push_back(blk.subspan(h * d, d));
        v_slice.block_mantissa_bits = v_view.block_mantissa_bits;
        if (v_view.residual_len > 0) v_slice.residual = v_view.residual.subspan(h * d, d);
        v_slice.residual_len = v_view.residual_len;

        GemmResult cres = gemm_context(p_rows, v_slice, d);
        overflow += cres.overflow_count;
        for (size_t i = 0; i < n_new; ++i) {
            for (size_t c = 0; c < d; ++c) context(i, h * d + c) = cres.out(i, c);
        }

        // shadow context
        for (size_t i = 0; i < n_new; ++i) {
            size_t valid = is_prefill ? base + i + 1 : t_total;
            for (size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (size_t j = 0; j < valid; ++j) acc += probs_s(i, j) * shadow_v_(j, h * d + c);
                context_s(i, h * d + c) = acc;
            }
        }
    }

    // ---- output projection and FFN ----
    BfpTensor cb = group_tensor(context, GroupingAxis::per_token, cfg.bfp);
    GemmResult ores = gemm(cb, model_.qwo);
    overflow += ores.overflow_count;
    Matrix attn_out_s = matmul(context_s, model_.wo_deq);

    BfpTensor ab = group_tensor(ores.out, GroupingAxis::per_token, cfg.bfp);
    GemmResult fres = gemm(ab, model_.qffn);
    overflow += fres.overflow_count;
    Matrix final_s = matmul(attn_out_s, model_.ffn_deq);

    output_ = fres.out;
    shadow_output_ = final_s;
    append_rows(all_outputs_, output_);
    append_rows(all_shadow_outputs_, shadow_output_);

    // ---- report ----
    Matrix k_cached = to_real(kh);
    rep.layers = {
        {"q", max_scaled_error(qs, qres.out), mean_scaled_error(qs, qres.out)},
        {"k", max_scaled_error(ks_shifted, k_cached), mean_scaled_error(ks_shifted, k_cached)},
        {"v", max_scaled_error(vs, vres.out), mean_scaled_error(vs, vres.out)},
        {"context", max_scaled_error(context_s, context), mean_scaled_error(context_s, context)},
        {"attn_out", max_scaled_error(attn_out_s, ores.out), mean_scaled_error(attn_out_s, ores.out)},
        {"final", max_scaled_error(final_s, fres.out), mean_scaled_error(final_s, fres.out)},
    };
    rep.kl_mean = kl_rows ? kl_sum / static_cast<double>(kl_rows) : 0.0;
    rep.kl_max = kl_max;
    rep.prob_row_sum_dev = row_dev;
    rep.overflow_count = overflow;

    // linear-layer EMA with the configured tiles (clipped to divisors)
    struct Lin {
        uint64_t M, K, N;
    };
    const Lin gemms[] = {
        {n_new, C, C}, {n_new, C, C}, {n_new, C, C}, {n_new, C, C}, {n_new, C, cfg.ffn_dim},
    };
    const double bits_act = 1.0 + cfg.bfp.mantissa_bits + 5.0 / static_cast<double>(g);
    const double bits_wgt = 4.0 + 16.0 / 128.0;
    uint64_t biggest = 0;
    for (const Lin& l : gemms) {
        GemmShape s;
        s.M = l.M;
        s.K = l.K;
        s.N = l.N;
        s.tile_m = largest_divisor_leq(l.M, cfg.tile_m);
        s.tile_n = largest_divisor_leq(l.N, cfg.tile_n);
        s.bits_a = bits_act;
        s.bits_b = bits_wgt;
        EmaReport er = choose_policy(s);
        rep.ema_elements_a += er.elements_a;
        rep.ema_elements_b += er.elements_b;
        rep.ema_total_bits += er.total_bits;
        rep.ema_energy_pj += er.energy_pj;
        if (l.M * l.K * l.N >= biggest) {
            biggest = l.M * l.K * l.N;
            rep.ema_policy = to_string(er.chosen_policy);
        }
    }
    return rep;
}

RunSummary run_pipeline(const ModelConfig& cfg) {
    RunSummary sum;
    sum.model = build_toy_model(cfg);
    PipelineRun run(sum.model);

    Rng irng(cfg.seed ^ kInputSalt);
    Matrix x = make_inputs(cfg, cfg.prefill_tokens, irng);
    sum.prefill = run.prefill(x);

    double attn_err = sum.prefill.layer_mean("attn_out");
    double final_err = sum.prefill.layer_mean("final");
    for (size_t s = 0; s < cfg.decode_steps; ++s) {
        Matrix row = make_inputs(cfg, 1, irng);
        StepReport rep = run.decode_step(row.row(0));
        attn_err += rep.layer_mean("attn_out");
        final_err += rep.layer_mean("final");
        sum.decode.push_back(std::move(rep));
    }
    const double steps = 1.0 + static_cast<double>(cfg.decode_steps);
    sum.attn_out_mean_err = attn_err / steps;
    sum.final_mean_err = final_err / steps;
    sum.final_max_err = max_scaled_error(run.all_shadow_outputs(), run.all_outputs());
    sum.final_output = run.output();
    sum.final_shadow = run.shadow_output();
    sum.offsets = run.offsets();
    sum.final_storage = run.cache().storage_bits();
    return sum;
}

std::vector<SweepPoint> run_sweep(const ModelConfig& base, const std::vector<size_t>& group_sizes,
                                  const std::vector<int>& mantissa_widths) {
    for (size_t g : group_sizes) {
        if (base.hidden % g != 0 || base.head_dim % g != 0 || base.ffn_dim % g != 0)
            raise(Errc::layout, "run_sweep: dimensions must be divisible by every group size");
    }

    // fixed reference K (fp16-exact) from the smoothing-free model so the
    // conversion-error trends are measured on identical data at every point
    ModelConfig ref_cfg = base;
    ref_cfg.smoothing = SmoothingSettings{};
    ToyModel ref_model = build_toy_model(ref_cfg);
    Rng irng(base.seed ^ kInputSalt);
    Matrix x = make_inputs(ref_cfg, ref_cfg.prefill_tokens, irng);
    Matrix k_ref = to_real(to_half(matmul(x, ref_model.wk_deq)));

    std::vector<SweepPoint> points;
    for (size_t g : group_sizes) {
        for (int m : mantissa_widths) {
            ModelConfig cfg = base;
            cfg.smoothing = SmoothingSettings{};
            cfg.bfp = BfpConfig{g, m};
            cfg.kv.group_size = g;
            cfg.kv.m_high = m;
            cfg.kv.m_low = m;
            cfg.decode_steps = 0;

            SweepPoint p;
            p.group_size = g;
            p.mantissa_bits = m;
            p.k_conversion = quantization_error(k_ref, cfg.bfp, GroupingAxis::per_token);
            RunSummary s = run_pipeline(cfg);
            p.final_max_err = s.prefill.layer_max("final");
            p.final_mean_err = s.prefill.layer_mean("final");
            p.kl_mean = s.prefill.kl_mean;
            points.push_back(p);
        }
    }
    return points;
}

ModelConfig apply_toggles(const ModelConfig& cfg, const AblationToggles& t) {
    ModelConfig out = cfg;
    if (!t.asym_alloc) out.kv.m_high = out.kv.m_low; // uniform low-precision cache
    out.smoothing.offline = t.offline_smooth;
    out.smoothing.online = t.online_smooth;
    return out;
}

std::vector<AblationRun> ablation(const ModelConfig& cfg, const std::vector<AblationToggles>& variants) {
    std::vector<AblationRun> runs;
    for (const AblationToggles& t : variants) {
        ModelConfig vcfg = apply_toggles(cfg, t);
        RunSummary s = run_pipeline(vcfg);
        AblationRun r;
        r.toggles = t;
        r.attn_out_mean_err = s.attn_out_mean_err;
        r.final_mean_err = s.final_mean_err;
        if (vcfg.smoothing.offline && vcfg.smoothing.scale.empty()) {
            r.calibrated = true;
            r.calibration_objective = s.model.calibration.objective;
            r.calibration_objective_at_ones = s.model.calibration.objective_at_ones;
        }
        runs.push_back(r);
    }
    return runs;
}

} // namespace harmonia
