#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "harmonia/bfp.hpp"
#include "harmonia/grouping.hpp"
#include "harmonia/matrix.hpp"

namespace harmonia {

enum class MacMode { m8w4, m8m4, m8m8 };

// Group-wise INT4 weights: values in [-8, 7] with one positive fp16 scale per
// group of 128 along the input dimension.
struct WeightGroup {
    std::vector<int8_t> q;
    Half scale;
};

class QuantWeights {
public:
    QuantWeights() = default;

    size_t in_dim() const { return in_dim_; }
    size_t out_dim() const { return out_dim_; }
    size_t group_size() const { return group_size_; }

    // int4 value and group scale for (input row r, output column c)
    int8_t q(size_t r, size_t c) const { return q_[c * in_dim_ + r]; }
    Half scale(size_t r, size_t c) const { return scales_[c * num_groups_ + r / group_size_]; }

    // int16 staging of column c for the dot kernels
    const int16_t* column_i16(size_t c) const { return q16_.data() + c * in_dim_; }

    Matrix dequantize() const;

    friend QuantWeights quantize_weights(const Matrix&, size_t);

private:
    size_t in_dim_ = 0, out_dim_ = 0, group_size_ = 128, num_groups_ = 0;
    std::vector<int8_t> q_;      // column-major [out][in]
    std::vector<int16_t> q16_;   // same values widened
    std::vector<Half> scales_;   // [out][group]
};

// Symmetric absmax quantization, groups along the input dimension:
// scale = max|w|/7 (1.0 for an all-zero group), q = round-half-away(w/scale)
// clamped to [-8, 7].
QuantWeights quantize_weights(const Matrix& w, size_t group_size = 128);

struct PartialSum {
    Half value;
    bool overflow = false;
};

// D * 2^(Ea-(ma-1)) * scale rounded once to fp16 (nearest even), saturating
// to +-65504 with the flag set.
PartialSum mac_m8w4(const BfpGroup& a, std::span<const int16_t> q, Half scale);
PartialSum mac_m8m4(const BfpGroup& a, const BfpGroup& b);
// b must carry 8-bit mantissas; the dot is fused from the hi/lo nibble halves
PartialSum mac_m8m8(const BfpGroup& a, const BfpGroup& b);

// exact fused integer dot: 16 * dot(a, hi(b)) + dot(a, lo(b))
int32_t nibble_fused_dot(const BfpGroup& a, const BfpGroup& b);
// direct integer dot of the signed mantissas
int32_t integer_dot(const BfpGroup& a, const BfpGroup& b);

struct AccumResult {
    float value = 0.0f;
    bool overflow = false;
};

// Left-to-right FP32 fold of the fp16 partials, in group index order.
AccumResult accumulate(std::span<const PartialSum> partials);

struct GemmResult {
    Matrix out;              // FP32 values widened to double storage
    size_t overflow_count = 0;
};

// A (per_token BFP, T x C) times W (C x N) -> T x N
GemmResult gemm(const BfpTensor& a, const QuantWeights& w);

// Scores: A (per_token, Tq x C) times rows of B groups (Tk rows, same group
// partition of C) -> Tq x Tk. Each B row may carry its own mantissa width;
// 8-bit rows take the fused M8M8 path, 4-bit rows M8M4.
struct GroupRowView {
    std::span<const BfpGroup> groups;
    int mantissa_bits; // expected precision tag; must match the groups
};
GemmResult gemm_scores(const BfpTensor& a, std::span<const GroupRowView> b_rows);

// Context: probability rows grouped along the key axis (full groups plus an
// optional trailing residual group) times V (per_channel, Tk x C) -> Tq x C.
struct VColumnsView {
    // full blocks: blocks[b] spans channels (one group per channel)
    std::vector<std::span<const BfpGroup>> blocks;
    std::vector<int> block_mantissa_bits;
    std::span<const BfpGroup> residual; // per channel; empty if none
    size_t residual_len = 0;
};
GemmResult gemm_context(std::span<const GroupRowView> p_rows, const VColumnsView& v, size_t channels);

} // namespace harmonia
