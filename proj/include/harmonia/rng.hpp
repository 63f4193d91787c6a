#pragma once

#include <cstdint>
#include <random>

#include "harmonia/matrix.hpp"

namespace harmonia {

// Deterministic Gaussian source. Box-Muller on top of mt19937_64 keeps the
// streams identical across standard libraries (std::normal_distribution is
// implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double uniform() {
        // 53-bit mantissa in [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double gaussian();

    Matrix gaussian_matrix(size_t rows, size_t cols, double stddev = 1.0, double mean = 0.0);

    uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace harmonia
