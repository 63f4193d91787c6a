#pragma once

#include <functional>
#include <set>
#include <vector>

#include "harmonia/matrix.hpp"

namespace harmonia {

// Per-channel scaling for the Q/K projection outputs. All entries positive.
using ScaleVector = std::vector<double>;

struct OffsetVector {
    std::vector<double> o;            // zero outside active_channels
    std::set<size_t> active_channels; // |set| == k
};

// Q columns divided by S, K columns multiplied by S. Exact-arithmetic
// invariant: softmax(Q'K'^T) == softmax(QK^T).
void apply_scale_qk(Matrix& q, Matrix& k, const ScaleVector& s);

// Same scaling folded into the projection weights (output channel c of Wq
// divided by S_c, of Wk multiplied by S_c).
void absorb_scale(Matrix& wq, Matrix& wk, const ScaleVector& s);

struct CalibrationConfig {
    int iterations = 100;
    double step = 1.0; // log2 probe granularity
    ScaleVector init;  // empty = ones
    // channel visit order for the coordinate sweep; callers that know which
    // channels carry outliers front-load them. Empty = 0..C-1.
    std::vector<size_t> channel_order;
    // log2 offsets probed per visit; empty = a symmetric default grid
    std::vector<double> probe_log2_steps;
};

// Evaluates the transformer-block objective for a candidate S: the BFP
// switch selects the reference path (false) or the converted path (true).
using BlockEval = std::function<Matrix(const Matrix& x, const ScaleVector& s, bool bfp_on)>;

struct CalibrationResult {
    ScaleVector scale;
    double objective_at_init = 0.0;
    double objective_at_ones = 0.0;
    double objective = 0.0;
    int iterations_run = 0;
    bool diverged = false;
    std::vector<double> objective_trace; // best-so-far per iteration
};

// Minimizes sum ||block(x, ones, off) - block(x, S, on)||^2 over the
// calibration set by coordinate descent on log2(S), keeping the best iterate;
// the returned S is never worse than the initialization.
CalibrationResult calibrate_scale(const BlockEval& block_eval, const std::vector<Matrix>& calib,
                                  size_t channels, const CalibrationConfig& cfg = {});

// Offsets from the initial window: per channel, the signed element of max
// absolute value; the top-k channels by that magnitude get half of it as
// their offset (ties broken by lower channel index).
OffsetVector compute_online_offsets(const Matrix& k_window, size_t top_k, bool allow_short_window = false);

// K_{:,c} - o_c for every row
Matrix apply_offsets(const Matrix& k, const OffsetVector& o);

// Mean over groups of (shared exponent - smallest nonzero element exponent);
// the per-group dynamic-range statistic outlier smoothing is meant to shrink.
double exponent_spread(const Matrix& x, size_t group_size);

} // namespace harmonia
