#include "harmonia/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "harmonia/error.hpp"
#include "harmonia/half.hpp"

namespace harmonia {

namespace {

void check_scale(const ScaleVector& s) {
    for (double v : s) {
        if (!(v > 0.0) || !std::isfinite(v)) raise(Errc::invalid_scale, "scale entries must be positive finite");
    }
}

double sq_norm_diff(const Matrix& a, const Matrix& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    return sum;
}

} // namespace

void apply_scale_qk(Matrix& q, Matrix& k, const ScaleVector& s) {
    if (q.cols() != s.size() || k.cols() != s.size()) raise(Errc::shape, "apply_scale_qk: width mismatch");
    check_scale(s);
    for (size_t r = 0; r < q.rows(); ++r) {
        for (size_t c = 0; c < q.cols(); ++c) q(r, c) /= s[c];
    }
    for (size_t r = 0; r < k.rows(); ++r) {
        for (size_t c = 0; c < k.cols(); ++c) k(r, c) *= s[c];
    }
}

void absorb_scale(Matrix& wq, Matrix& wk, const ScaleVector& s) {
    if (wq.cols() != s.size() || wk.cols() != s.size()) raise(Errc::shape, "absorb_scale: width mismatch");
    check_scale(s);
    for (size_t r = 0; r < wq.rows(); ++r) {
        for (size_t c = 0; c < wq.cols(); ++c) wq(r, c) /= s[c];
    }
    for (size_t r = 0; r < wk.rows(); ++r) {
        for (size_t c = 0; c < wk.cols(); ++c) wk(r, c) *= s[c];
    }
}

namespace {

double objective_for(const BlockEval& eval, const std::vector<Matrix>& calib,
                     const std::vector<Matrix>& references, const ScaleVector& s) {
    double total = 0.0;
    for (size_t i = 0; i < calib.size(); ++i) {
        Matrix out = eval(calib[i], s, true);
        total += sq_norm_diff(references[i], out);
    }
    return total;
}

} // namespace

CalibrationResult calibrate_scale(const BlockEval& block_eval, const std::vector<Matrix>& calib,
                                  size_t channels, const CalibrationConfig& cfg) {
    if (calib.empty()) raise(Errc::empty_input, "calibrate_scale: no calibration samples");
    ScaleVector s = cfg.init.empty() ? ScaleVector(channels, 1.0) : cfg.init;
    if (s.size() != channels) raise(Errc::shape, "calibrate_scale: init width mismatch");
    check_scale(s);

    const ScaleVector ones(channels, 1.0);
    std::vector<Matrix> references;
    references.reserve(calib.size());
    for (const Matrix& x : calib) references.push_back(block_eval(x, ones, false));

    CalibrationResult res;
    res.scale = s;
    res.objective_at_init = objective_for(block_eval, calib, references, s);
    res.objective = res.objective_at_init;
    res.objective_at_ones =
        (s == ones) ? res.objective_at_init : objective_for(block_eval, calib, references, ones);
    if (!std::isfinite(res.objective)) {
        res.diverged = true;
        return res;
    }

    // a non-ones initialization still may not return anything worse than ones
    if (std::isfinite(res.objective_at_ones) && res.objective_at_ones < res.objective) {
        res.objective = res.objective_at_ones;
        res.scale = ones;
        s = ones;
    }

    std::vector<size_t> order = cfg.channel_order;
    if (order.empty()) {
        order.resize(channels);
        std::iota(order.begin(), order.end(), 0);
    }
    for (size_t c : order) {
        if (c >= channels) raise(Errc::invalid_argument, "calibrate_scale: channel order out of range");
    }

    std::vector<double> probes = cfg.probe_log2_steps;
    if (probes.empty()) probes = {-7, -6, -5, -4, -3, -2, -1, -0.5, 0.5, 1, 2, 3};
    for (int it = 0; it < cfg.iterations; ++it) {
        size_t c = order[static_cast<size_t>(it) % order.size()];
        double base = s[c];
        double best_val = res.objective;
        double best_scale = base;
        for (double p : probes) {
            ScaleVector trial = s;
            trial[c] = base * std::exp2(p * cfg.step);
            if (!(trial[c] > 0.0) || !std::isfinite(trial[c])) continue;
            double obj = objective_for(block_eval, calib, references, trial);
            if (!std::isfinite(obj)) {
                res.diverged = true;
                continue;
            }
            if (obj < best_val) {
                best_val = obj;
                best_scale = trial[c];
            }
        }
        s[c] = best_scale;
        res.objective = best_val;
        res.scale = s;
        res.iterations_run = it + 1;
        res.objective_trace.push_back(res.objective);
        if (res.diverged) break;
    }
    return res;
}

OffsetVector compute_online_offsets(const Matrix& k_window, size_t top_k, bool allow_short_window) {
    if (top_k > k_window.cols()) raise(Errc::invalid_argument, "top_k exceeds channel count");
    if (k_window.rows() != 32 && !allow_short_window)
        raise(Errc::shape, "offset window must hold exactly 32 tokens");
    const size_t c_count = k_window.cols();

    // per-channel signed element of maximum |.|, first occurrence wins ties
    std::vector<double> peak(c_count, 0.0);
    std::vector<double> peak_abs(c_count, 0.0);
    for (size_t r = 0; r < k_window.rows(); ++r) {
        for (size_t c = 0; c < c_count; ++c) {
            double v = k_window(r, c);
            if (std::fabs(v) > peak_abs[c]) {
                peak_abs[c] = std::fabs(v);
                peak[c] = v;
            }
        }
    }

    std::vector<size_t> order(c_count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return peak_abs[a] > peak_abs[b]; });

    OffsetVector out;
    out.o.assign(c_count, 0.0);
    for (size_t i = 0; i < top_k; ++i) {
        size_t c = order[i];
        out.active_channels.insert(c);
        out.o[c] = 0.5 * peak[c];
    }
    return out;
}

Matrix apply_offsets(const Matrix& k, const OffsetVector& o) {
    if (k.cols() != o.o.size()) raise(Errc::shape, "apply_offsets: width mismatch");
    Matrix out = k;
    for (size_t r = 0; r < out.rows(); ++r) {
        for (size_t c = 0; c < out.cols(); ++c) out(r, c) -= o.o[c];
    }
    return out;
}

double exponent_spread(const Matrix& x, size_t group_size) {
    if (x.cols() % group_size != 0) raise(Errc::layout, "exponent_spread: width not group aligned");
    double total = 0.0;
    size_t groups = 0;
    for (size_t r = 0; r < x.rows(); ++r) {
        for (size_t j = 0; j < x.cols() / group_size; ++j) {
            int max_e = -15;
            int min_e = 16;
            for (size_t i = 0; i < group_size; ++i) {
                Half h = Half::from_double(x(r, j * group_size + i));
                if (h.is_zero()) continue;
                int e = h.field_exponent();
                max_e = std::max(max_e, e);
                min_e = std::min(min_e, e);
            }
            if (max_e < min_e) continue; // all-zero group
            total += max_e - min_e;
            groups += 1;
        }
    }
    return groups ? total / static_cast<double>(groups) : 0.0;
}

} // namespace harmonia
