#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "harmonia/half.hpp"

namespace harmonia {

enum class GroupingAxis : uint8_t {
    per_token = 0,   // a group spans consecutive channels of one token
    per_channel = 1, // a group spans consecutive tokens of one channel
};

struct BfpConfig {
    size_t group_size = 32;
    int mantissa_bits = 8; // production uses 4 or 8; sweeps allow 1..10
    static constexpr int exponent_bits = 5;

    void validate() const;
};

// One shared-exponent group: 5-bit shared exponent (unbiased, [-14, 15]),
// per-element sign and m-bit magnitude. Reconstruction of element i is
// sign_i * mag_i * 2^(exp - (m-1)).
class BfpGroup {
public:
    static constexpr size_t kMaxSize = 128;

    BfpGroup() = default;

    int shared_exp() const { return shared_exp_; }
    int mantissa_bits() const { return mantissa_bits_; }
    size_t size() const { return size_; }

    uint16_t magnitude(size_t i) const { return mags_[i]; }
    bool negative(size_t i) const { return neg_[i] != 0; }

    const uint16_t* magnitudes() const { return mags_.data(); }
    const uint8_t* neg_flags() const { return neg_.data(); }

    // quantization step 2^(exp - (m-1))
    double step() const;

    // signed mantissas, ready for the integer dot kernels
    void signed_mantissas(int16_t* out) const;

    double element(size_t i) const;
    std::vector<double> dequantize() const;
    void dequantize_into(std::span<double> out) const;
    void dequantize_into(std::span<float> out) const;

    bool bitwise_equal(const BfpGroup& other) const;

    // construction from raw parts (deserialization, tests)
    static BfpGroup from_parts(int shared_exp, int mantissa_bits, std::span<const uint16_t> mags,
                               std::span<const uint8_t> neg);

    friend BfpGroup convert_group(std::span<const Half>, const BfpConfig&);
    friend BfpGroup convert_group(std::span<const uint16_t>, const BfpConfig&);
    friend BfpGroup truncate_mantissas(const BfpGroup&, int);

private:
    int8_t shared_exp_ = -14;
    uint8_t mantissa_bits_ = 8;
    uint8_t size_ = 0;
    std::array<uint16_t, kMaxSize> mags_{};
    std::array<uint8_t, kMaxSize> neg_{};
};

// FP16 -> BFP conversion: shared exponent is the max field exponent in the
// group, magnitudes truncate toward zero. Rejects NaN/Inf and empty input.
BfpGroup convert_group(std::span<const Half> values, const BfpConfig& cfg);
BfpGroup convert_group(std::span<const uint16_t> fp16_bits, const BfpConfig& cfg);

std::vector<double> dequantize_group(const BfpGroup& g);

// Precision demotion by magnitude right-shift; bitwise equal to converting
// the original data at m_new directly.
BfpGroup truncate_mantissas(const BfpGroup& g, int m_new);

struct MantissaHalves {
    bool negative;
    uint8_t hi; // magnitude >> 4
    uint8_t lo; // magnitude & 0xF
};

// Splits an 8-bit magnitude into nibbles; the sign applies to both halves.
MantissaHalves split_mantissa(bool negative, unsigned magnitude);

} // namespace harmonia
