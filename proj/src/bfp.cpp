#include "harmonia/bfp.hpp"

#include <cmath>
#include <cstring>

#include "harmonia/error.hpp"
#include "harmonia/kernels.hpp"

namespace harmonia {

void BfpConfig::validate() const {
    if (group_size < 1 || group_size > BfpGroup::kMaxSize)
        raise(Errc::invalid_argument, "group_size must be in [1, 128]");
    if (mantissa_bits < 1 || mantissa_bits > 10)
        raise(Errc::invalid_argument, "mantissa_bits must be in [1, 10]");
}

double BfpGroup::step() const { return std::ldexp(1.0, shared_exp_ - (mantissa_bits_ - 1)); }

void BfpGroup::signed_mantissas(int16_t* out) const {
    kernels::active().apply_signs(mags_.data(), neg_.data(), size_, out);
}

double BfpGroup::element(size_t i) const {
    double v = static_cast<double>(mags_[i]) * step();
    return neg_[i] ? -v : v;
}

std::vector<double> BfpGroup::dequantize() const {
    std::vector<double> out(size_);
    dequantize_into(out);
    return out;
}

void BfpGroup::dequantize_into(std::span<double> out) const {
    kernels::active().dequantize_f64(mags_.data(), neg_.data(), size_, step(), out.data());
}

void BfpGroup::dequantize_into(std::span<float> out) const {
    kernels::active().dequantize_f32(mags_.data(), neg_.data(), size_, static_cast<float>(step()), out.data());
}

bool BfpGroup::bitwise_equal(const BfpGroup& other) const {
    if (shared_exp_ != other.shared_exp_ || mantissa_bits_ != other.mantissa_bits_ || size_ != other.size_)
        return false;
    return std::memcmp(mags_.data(), other.mags_.data(), size_ * sizeof(uint16_t)) == 0 &&
           std::memcmp(neg_.data(), other.neg_.data(), size_) == 0;
}

BfpGroup BfpGroup::from_parts(int shared_exp, int mantissa_bits, std::span<const uint16_t> mags,
                              std::span<const uint8_t> neg) {
    if (mags.size() != neg.size() || mags.empty() || mags.size() > kMaxSize)
        raise(Errc::invalid_argument, "bad group part sizes");
    if (shared_exp < -14 || shared_exp > 15) raise(Errc::invalid_argument, "shared exponent out of range");
    if (mantissa_bits < 1 || mantissa_bits > 10) raise(Errc::invalid_argument, "mantissa bits out of range");
    BfpGroup g;
    g.shared_exp_ = static_cast<int8_t>(shared_exp);
    g.mantissa_bits_ = static_cast<uint8_t>(mantissa_bits);
    g.size_ = static_cast<uint8_t>(mags.size());
    const uint16_t limit = static_cast<uint16_t>(1u << mantissa_bits);
    for (size_t i = 0; i < mags.size(); ++i) {
        if (mags[i] >= limit) raise(Errc::invalid_argument, "magnitude exceeds mantissa width");
        g.mags_[i] = mags[i];
        g.neg_[i] = neg[i] ? 1 : 0;
    }
    return g;
}

BfpGroup convert_group(std::span<const Half> values, const BfpConfig& cfg) {
    static_assert(sizeof(Half) == sizeof(uint16_t));
    if (values.empty()) raise(Errc::empty_input, "convert_group: empty input");
    return convert_group(std::span<const uint16_t>(reinterpret_cast<const uint16_t*>(values.data()), values.size()),
                         cfg);
}

BfpGroup convert_group(std::span<const uint16_t> fp16_bits, const BfpConfig& cfg) {
    cfg.validate();
    if (fp16_bits.empty()) raise(Errc::empty_input, "convert_group: empty input");
    if (fp16_bits.size() > cfg.group_size)
        raise(Errc::invalid_argument, "convert_group: more values than group_size");

    const auto& k = kernels::active();
    if (k.any_non_finite(fp16_bits.data(), fp16_bits.size()))
        raise(Errc::invalid_value, "convert_group: NaN or Inf input");

    BfpGroup g;
    g.shared_exp_ = static_cast<int8_t>(k.max_field_exponent(fp16_bits.data(), fp16_bits.size()));
    g.mantissa_bits_ = static_cast<uint8_t>(cfg.mantissa_bits);
    g.size_ = static_cast<uint8_t>(fp16_bits.size());
    k.encode_mantissas(fp16_bits.data(), fp16_bits.size(), g.shared_exp_, cfg.mantissa_bits, g.mags_.data(),
                       g.neg_.data());
    return g;
}

std::vector<double> dequantize_group(const BfpGroup& g) { return g.dequantize(); }

BfpGroup truncate_mantissas(const BfpGroup& g, int m_new) {
    if (m_new >= g.mantissa_bits()) raise(Errc::invalid_argument, "truncate_mantissas: m_new must shrink");
    if (m_new < 1) raise(Errc::invalid_argument, "truncate_mantissas: m_new must be >= 1");
    BfpGroup out = g;
    const int shift = g.mantissa_bits() - m_new;
    out.mantissa_bits_ = static_cast<uint8_t>(m_new);
    for (size_t i = 0; i < out.size_; ++i) {
        out.mags_[i] = static_cast<uint16_t>(out.mags_[i] >> shift);
    }
    return out;
}

MantissaHalves split_mantissa(bool negative, unsigned magnitude) {
    if (magnitude >= 256) raise(Errc::invalid_argument, "split_mantissa: magnitude must be < 256");
    return MantissaHalves{negative, static_cast<uint8_t>(magnitude >> 4), static_cast<uint8_t>(magnitude & 0xF)};
}

} // namespace harmonia
