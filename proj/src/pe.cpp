#include "harmonia/pe.hpp"

#include <algorithm>
#include <cmath>

#include "harmonia/error.hpp"
#include "harmonia/kernels.hpp"

namespace harmonia {

namespace {

constexpr uint16_t kSmallestSubnormal = 0x0001;

PartialSum to_partial(double value) {
    PartialSum p;
    p.value = Half::from_double(value, &p.overflow);
    return p;
}

void signed_lanes(const BfpGroup& g, int16_t* out) { g.signed_mantissas(out); }

} // namespace

Matrix QuantWeights::dequantize() const {
    Matrix w(in_dim_, out_dim_);
    for (size_t c = 0; c < out_dim_; ++c) {
        for (size_t r = 0; r < in_dim_; ++r) {
            w(r, c) = static_cast<double>(q(r, c)) * scale(r, c).to_double();
        }
    }
    return w;
}

QuantWeights quantize_weights(const Matrix& w, size_t group_size) {
    if (group_size < 1) raise(Errc::invalid_argument, "weight group size must be positive");
    for (double v : w.data()) {
        if (!std::isfinite(v)) raise(Errc::invalid_value, "quantize_weights: non-finite weight");
    }
    QuantWeights out;
    out.in_dim_ = w.rows();
    out.out_dim_ = w.cols();
    out.group_size_ = group_size;
    out.num_groups_ = (w.rows() + group_size - 1) / group_size;
    out.q_.resize(w.rows() * w.cols());
    out.q16_.resize(w.rows() * w.cols());
    out.scales_.resize(out.num_groups_ * w.cols());

    for (size_t c = 0; c < w.cols(); ++c) {
        for (size_t gi = 0; gi < out.num_groups_; ++gi) {
            size_t lo = gi * group_size;
            size_t hi = std::min(lo + group_size, w.rows());
            double absmax = 0.0;
            for (size_t r = lo; r < hi; ++r) absmax = std::max(absmax, std::fabs(w(r, c)));

            Half scale;
            if (absmax == 0.0) {
                scale = Half::from_double(1.0);
            } else {
                scale = Half::from_double(absmax / 7.0);
                if (scale.is_zero()) scale = Half(kSmallestSubnormal);
            }
            out.scales_[c * out.num_groups_ + gi] = scale;

            double s = scale.to_double();
            for (size_t r = lo; r < hi; ++r) {
                double qv = std::round(w(r, c) / s); // half away from zero
                qv = std::clamp(qv, -8.0, 7.0);
                int8_t qi = static_cast<int8_t>(qv);
                out.q_[c * out.in_dim_ + r] = qi;
                out.q16_[c * out.in_dim_ + r] = qi;
            }
        }
    }
    return out;
}

PartialSum mac_m8w4(const BfpGroup& a, std::span<const int16_t> q, Half scale) {
    if (q.size() != a.size()) raise(Errc::shape, "mac_m8w4: length mismatch");
    int16_t lanes[BfpGroup::kMaxSize];
    signed_lanes(a, lanes);
    int32_t d = kernels::active().dot_i16(lanes, q.data(), a.size());
    double value = std::ldexp(static_cast<double>(d), a.shared_exp() - (a.mantissa_bits() - 1)) * scale.to_double();
    return to_partial(value);
}

int32_t integer_dot(const BfpGroup& a, const BfpGroup& b) {
    if (a.size() != b.size()) raise(Errc::shape, "integer_dot: length mismatch");
    int16_t la[BfpGroup::kMaxSize];
    int16_t lb[BfpGroup::kMaxSize];
    signed_lanes(a, la);
    signed_lanes(b, lb);
    return kernels::active().dot_i16(la, lb, a.size());
}

int32_t nibble_fused_dot(const BfpGroup& a, const BfpGroup& b) {
    if (a.size() != b.size()) raise(Errc::shape, "nibble_fused_dot: length mismatch");
    if (b.mantissa_bits() != 8) raise(Errc::invalid_argument, "nibble split needs 8-bit mantissas");
    int16_t la[BfpGroup::kMaxSize];
    int16_t hi[BfpGroup::kMaxSize];
    int16_t lo[BfpGroup::kMaxSize];
    signed_lanes(a, la);
    for (size_t i = 0; i < b.size(); ++i) {
        MantissaHalves h = split_mantissa(b.negative(i), b.magnitude(i));
        hi[i] = h.negative ? static_cast<int16_t>(-h.hi) : h.hi;
        lo[i] = h.negative ? static_cast<int16_t>(-h.lo) : h.lo;
    }
    const auto& k = kernels::active();
    int32_t d_hi = k.dot_i16(la, hi, a.size());
    int32_t d_lo = k.dot_i16(la, lo, a.size());
    return 16 * d_hi + d_lo;
}

PartialSum mac_m8m4(const BfpGroup& a, const BfpGroup& b) {
    int32_t d = integer_dot(a, b);
    int shift = (a.shared_exp() - (a.mantissa_bits() - 1)) + (b.shared_exp() - (b.mantissa_bits() - 1));
    return to_partial(std::ldexp(static_cast<double>(d), shift));
}

PartialSum mac_m8m8(const BfpGroup& a, const BfpGroup& b) {
    int32_t d = nibble_fused_dot(a, b);
    int shift = (a.shared_exp() - (a.mantissa_bits() - 1)) + (b.shared_exp() - (b.mantissa_bits() - 1));
    return to_partial(std::ldexp(static_cast<double>(d), shift));
}

AccumResult accumulate(std::span<const PartialSum> partials) {
    AccumResult r;
    for (const PartialSum& p : partials) {
        r.value += p.value.to_float();
        r.overflow |= p.overflow;
    }
    return r;
}

GemmResult gemm(const BfpTensor& a, const QuantWeights& w) {
    if (a.axis() != GroupingAxis::per_token) raise(Errc::shape, "gemm: activations must be per_token");
    if (a.channels() != w.in_dim()) raise(Errc::shape, "gemm: inner dimensions differ");
    const size_t ga = a.config().group_size;
    if (w.group_size() % ga != 0)
        raise(Errc::shape, "gemm: weight groups must align with activation groups");

    GemmResult res;
    res.out = Matrix(a.tokens(), w.out_dim());
    int16_t lanes[BfpGroup::kMaxSize];
    const auto& k = kernels::active();
    for (size_t t = 0; t < a.tokens(); ++t) {
        for (size_t n = 0; n < w.out_dim(); ++n) {
            float acc = 0.0f;
            for (size_t j = 0; j < a.full_group_cols(); ++j) {
                const BfpGroup& g = a.group(t, j);
                g.signed_mantissas(lanes);
                size_t row0 = j * ga;
                int32_t d = k.dot_i16(lanes, w.column_i16(n) + row0, g.size());
                double value = std::ldexp(static_cast<double>(d), g.shared_exp() - (g.mantissa_bits() - 1)) *
                               w.scale(row0, n).to_double();
                PartialSum p = to_partial(value);
                acc += p.value.to_float();
                res.overflow_count += p.overflow ? 1 : 0;
            }
            res.out(t, n) = static_cast<double>(acc);
        }
    }
    return res;
}

GemmResult gemm_scores(const BfpTensor& a, std::span<const GroupRowView> b_rows) {
    if (a.axis() != GroupingAxis::per_token) raise(Errc::shape, "gemm_scores: queries must be per_token");
    GemmResult res;
    res.out = Matrix(a.tokens(), b_rows.size());
    for (size_t i = 0; i < a.tokens(); ++i) {
        for (size_t j = 0; j < b_rows.size(); ++j) {
            const GroupRowView& row = b_rows[j];
            if (row.groups.size() != a.full_group_cols())
                raise(Errc::shape, "gemm_scores: group count mismatch");
            float acc = 0.0f;
            for (size_t g = 0; g < row.groups.size(); ++g) {
                const BfpGroup& bg = row.groups[g];
                if (bg.mantissa_bits() != row.mantissa_bits)
                    raise(Errc::invariant, "gemm_scores: precision tag does not match stored group");
                PartialSum p = (row.mantissa_bits == 8) ? mac_m8m8(a.group(i, g), bg)
                                                        : mac_m8m4(a.group(i, g), bg);
                acc += p.value.to_float();
                res.overflow_count += p.overflow ? 1 : 0;
            }
            res.out(i, j) = static_cast<double>(acc);
        }
    }
    return res;
}

GemmResult gemm_context(std::span<const GroupRowView> p_rows, const VColumnsView& v, size_t channels) {
    const size_t blocks = v.blocks.size();
    const size_t expect_groups = blocks + (v.residual_len > 0 ? 1 : 0);

    GemmResult res;
    res.out = Matrix(p_rows.size(), channels);
    for (size_t i = 0; i < p_rows.size(); ++i) {
        const GroupRowView& row = p_rows[i];
        if (row.groups.size() != expect_groups) raise(Errc::shape, "gemm_context: key-axis partitions differ");
        for (size_t c = 0; c < channels; ++c) {
            float acc = 0.0f;
            for (size_t b = 0; b < blocks; ++b) {
                const BfpGroup& vg = v.blocks[b][c];
                if (vg.mantissa_bits() != v.block_mantissa_bits[b])
                    raise(Errc::invariant, "gemm_context: precision tag does not match stored group");
                PartialSum p = (vg.mantissa_bits() == 8) ? mac_m8m8(row.groups[b], vg)
                                                         : mac_m8m4(row.groups[b], vg);
                acc += p.value.to_float();
                res.overflow_count += p.overflow ? 1 : 0;
            }
            if (v.residual_len > 0) {
                const BfpGroup& vg = v.residual[c];
                if (vg.size() != v.residual_len) raise(Errc::shape, "gemm_context: residual length mismatch");
                PartialSum p = (vg.mantissa_bits() == 8) ? mac_m8m8(row.groups[blocks], vg)
                                                         : mac_m8m4(row.groups[blocks], vg);
                acc += p.value.to_float();
                res.overflow_count += p.overflow ? 1 : 0;
            }
            res.out(i, c) = static_cast<double>(acc);
        }
    }
    return res;
}

} // namespace harmonia
