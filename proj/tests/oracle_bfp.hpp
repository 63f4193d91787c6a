#pragma once

// Independent scalar reference for the FP16 -> BFP conversion, written from
// the definition: decode each element to a real value, take the max field
// exponent as the shared exponent, divide by the quantization step, floor.
// Deliberately shares no code with the library implementation.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

struct Group {
    int shared_exp = -14;
    int mantissa_bits = 8;
    std::vector<uint16_t> mags;
    std::vector<uint8_t> neg;
};

inline double decode_fp16(uint16_t b) {
    int e = (b >> 10) & 31;
    int f = b & 1023;
    double mag = (e == 0) ? std::ldexp(static_cast<double>(f), -24)
                          : std::ldexp(static_cast<double>(1024 + f), e - 25);
    return (b & 0x8000) ? -mag : mag;
}

inline int field_exponent(uint16_t b) {
    int e = (b >> 10) & 31;
    return (e > 0 ? e : 1) - 15;
}

inline bool is_finite_fp16(uint16_t b) { return ((b >> 10) & 31) != 31; }

inline Group convert(const std::vector<uint16_t>& bits, int m) {
    Group g;
    g.mantissa_bits = m;
    for (uint16_t b : bits) g.shared_exp = std::max(g.shared_exp, field_exponent(b));
    double step = std::ldexp(1.0, g.shared_exp - (m - 1));
    for (uint16_t b : bits) {
        double v = decode_fp16(b);
        g.mags.push_back(static_cast<uint16_t>(std::floor(std::fabs(v) / step)));
        g.neg.push_back((b & 0x8000) != 0 && (b & 0x7FFF) != 0 ? 1 : 0);
    }
    return g;
}

inline std::vector<double> dequantize(const Group& g) {
    double step = std::ldexp(1.0, g.shared_exp - (g.mantissa_bits - 1));
    std::vector<double> out;
    out.reserve(g.mags.size());
    for (size_t i = 0; i < g.mags.size(); ++i) {
        double v = static_cast<double>(g.mags[i]) * step;
        out.push_back(g.neg[i] ? -v : v);
    }
    return out;
}

} // namespace oracle
