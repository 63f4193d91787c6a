#include "harmonia/grouping.hpp"

#include <algorithm>
#include <array>

#include "harmonia/error.hpp"
#include "harmonia/kernels.hpp"

namespace harmonia {

Matrix BfpTensor::dequantize() const {
    Matrix out(tokens_, channels_);
    const size_t g = cfg_.group_size;
    std::vector<double> buf(g);
    if (axis_ == GroupingAxis::per_token) {
        for (size_t t = 0; t < rows_; ++t) {
            for (size_t j = 0; j < cols_; ++j) {
                const BfpGroup& grp = group(t, j);
                grp.dequantize_into(std::span<double>(buf.data(), grp.size()));
                for (size_t i = 0; i < grp.size(); ++i) out(t, j * g + i) = buf[i];
            }
        }
        return out;
    }
    for (size_t b = 0; b < rows_; ++b) {
        for (size_t c = 0; c < cols_; ++c) {
            const BfpGroup& grp = group(b, c);
            grp.dequantize_into(std::span<double>(buf.data(), grp.size()));
            for (size_t i = 0; i < grp.size(); ++i) out(b * g + i, c) = buf[i];
        }
    }
    if (residual_len_ > 0) {
        size_t base = rows_ * g;
        for (size_t c = 0; c < channels_; ++c) {
            const BfpGroup& grp = residual_[c];
            grp.dequantize_into(std::span<double>(buf.data(), grp.size()));
            for (size_t i = 0; i < grp.size(); ++i) out(base + i, c) = buf[i];
        }
    }
    return out;
}

bool BfpTensor::bitwise_equal(const BfpTensor& other) const {
    if (axis_ != other.axis_ || tokens_ != other.tokens_ || channels_ != other.channels_ ||
        residual_len_ != other.residual_len_)
        return false;
    for (size_t i = 0; i < groups_.size(); ++i) {
        if (!groups_[i].bitwise_equal(other.groups_[i])) return false;
    }
    for (size_t i = 0; i < residual_.size(); ++i) {
        if (residual_len_ > 0 && !residual_[i].bitwise_equal(other.residual_[i])) return false;
    }
    return true;
}

BfpTensor group_tensor(const HalfMatrix& x, GroupingAxis axis, const BfpConfig& cfg) {
    cfg.validate();
    const size_t g = cfg.group_size;
    BfpTensor t;
    t.axis_ = axis;
    t.tokens_ = x.rows();
    t.channels_ = x.cols();
    t.cfg_ = cfg;

    if (axis == GroupingAxis::per_token) {
        if (x.cols() % g != 0)
            raise(Errc::layout, "per_token grouping needs channels divisible by group_size");
        t.rows_ = x.rows();
        t.cols_ = x.cols() / g;
        t.groups_.reserve(t.rows_ * t.cols_);
        for (size_t tok = 0; tok < t.rows_; ++tok) {
            for (size_t j = 0; j < t.cols_; ++j) {
                t.groups_.push_back(convert_group(x.row(tok).subspan(j * g, g), cfg));
            }
        }
        return t;
    }

    t.rows_ = x.rows() / g;
    t.cols_ = x.cols();
    t.residual_len_ = x.rows() % g;
    t.groups_.reserve(t.rows_ * t.cols_);
    std::vector<Half> col(g);
    for (size_t b = 0; b < t.rows_; ++b) {
        for (size_t c = 0; c < t.cols_; ++c) {
            for (size_t i = 0; i < g; ++i) col[i] = x(b * g + i, c);
            t.groups_.push_back(convert_group(std::span<const Half>(col.data(), g), cfg));
        }
    }
    if (t.residual_len_ > 0) {
        t.residual_.reserve(t.channels_);
        size_t base = t.rows_ * g;
        for (size_t c = 0; c < t.channels_; ++c) {
            for (size_t i = 0; i < t.residual_len_; ++i) col[i] = x(base + i, c);
            t.residual_.push_back(convert_group(std::span<const Half>(col.data(), t.residual_len_), cfg));
        }
    }
    return t;
}

BfpTensor group_tensor(const Matrix& x, GroupingAxis axis, const BfpConfig& cfg) {
    return group_tensor(to_half(x), axis, cfg);
}

IncrementalVState::IncrementalVState(size_t channels, const BfpConfig& cfg) : channels_(channels), cfg_(cfg) {
    cfg.validate();
    committed_.axis_ = GroupingAxis::per_channel;
    committed_.tokens_ = 0;
    committed_.channels_ = channels;
    committed_.rows_ = 0;
    committed_.cols_ = channels;
    committed_.cfg_ = cfg;
}

void IncrementalVState::reencode_residual() {
    residual_view_.clear();
    const size_t r = residual_fp16_.size();
    if (r == 0) return;
    residual_view_.reserve(channels_);
    std::vector<Half> col(r);
    for (size_t c = 0; c < channels_; ++c) {
        for (size_t i = 0; i < r; ++i) col[i] = residual_fp16_[i][c];
        residual_view_.push_back(convert_group(std::span<const Half>(col.data(), r), cfg_));
    }
}

std::span<const BfpGroup> IncrementalVState::append_token(std::span<const Half> v_row) {
    if (v_row.size() != channels_) raise(Errc::layout, "append_token: row width mismatch");
    residual_fp16_.emplace_back(v_row.begin(), v_row.end());
    reencode_residual();
    if (residual_fp16_.size() < cfg_.group_size) {
        last_commit_.clear();
        return {};
    }
    // residual reached a full group: the re-encoded view IS the final
    // conversion; commit it and start over
    last_commit_ = residual_view_;
    committed_.groups_.insert(committed_.groups_.end(), residual_view_.begin(), residual_view_.end());
    committed_.rows_ += 1;
    committed_.tokens_ += cfg_.group_size;
    residual_fp16_.clear();
    residual_view_.clear();
    return {last_commit_.data(), last_commit_.size()};
}

TokenStreamConverter::TokenStreamConverter(const BfpConfig& cfg) : cfg_(cfg) { cfg.validate(); }

std::optional<BfpGroup> TokenStreamConverter::push(Half value) {
    if (!value.is_finite()) raise(Errc::invalid_value, "stream: NaN or Inf input");
    running_exp_ = std::max(running_exp_, value.field_exponent());
    buffer_.push_back(value);
    if (buffer_.size() < cfg_.group_size) return std::nullopt;
    return *flush();
}

std::optional<BfpGroup> TokenStreamConverter::flush() {
    if (buffer_.empty()) return std::nullopt;
    BfpConfig cfg = cfg_;
    BfpGroup g = convert_group(std::span<const Half>(buffer_.data(), buffer_.size()), cfg);
    // the streamed comparator must agree with the batch reduction
    if (g.shared_exp() != running_exp_) raise(Errc::invariant, "stream: running exponent mismatch");
    buffer_.clear();
    running_exp_ = -14;
    return g;
}

ChannelStreamConverter::ChannelStreamConverter(const BfpConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    if (cfg.group_size % 8 != 0)
        raise(Errc::invalid_argument, "channel path needs a group size divisible by 8");
}

std::optional<BfpGroup> ChannelStreamConverter::push_batch(std::span<const Half> batch8) {
    if (batch8.size() != 8) raise(Errc::layout, "channel path consumes batches of 8 results");
    // comparator tree over the 8 simultaneous results
    int m01 = std::max(batch8[0].field_exponent(), batch8[1].field_exponent());
    int m23 = std::max(batch8[2].field_exponent(), batch8[3].field_exponent());
    int m45 = std::max(batch8[4].field_exponent(), batch8[5].field_exponent());
    int m67 = std::max(batch8[6].field_exponent(), batch8[7].field_exponent());
    int batch_max = std::max(std::max(m01, m23), std::max(m45, m67));
    running_exp_ = std::max(running_exp_, batch_max);
    buffer_.insert(buffer_.end(), batch8.begin(), batch8.end());
    if (++batches_ < static_cast<int>(cfg_.group_size / 8)) return std::nullopt;

    for (const Half& h : buffer_) {
        if (!h.is_finite()) raise(Errc::invalid_value, "stream: NaN or Inf input");
    }
    // aligner pass: four 8-element subgroups encoded against the shared max
    std::array<uint16_t, BfpGroup::kMaxSize> mags{};
    std::array<uint8_t, BfpGroup::kMaxSize> neg{};
    const auto& k = kernels::active();
    for (size_t sub = 0; sub < buffer_.size(); sub += 8) {
        k.encode_mantissas(reinterpret_cast<const uint16_t*>(buffer_.data()) + sub, 8, running_exp_,
                           cfg_.mantissa_bits, mags.data() + sub, neg.data() + sub);
    }
    BfpGroup g = BfpGroup::from_parts(running_exp_, cfg_.mantissa_bits,
                                      std::span<const uint16_t>(mags.data(), buffer_.size()),
                                      std::span<const uint8_t>(neg.data(), buffer_.size()));
    buffer_.clear();
    running_exp_ = -14;
    batches_ = 0;
    return g;
}

ErrorStats quantization_error(const Matrix& x, const BfpConfig& cfg, GroupingAxis axis) {
    BfpTensor t = group_tensor(x, axis, cfg);
    return error_stats(x, t.dequantize());
}

} // namespace harmonia
