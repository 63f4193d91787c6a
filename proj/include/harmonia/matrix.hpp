#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "harmonia/half.hpp"

namespace harmonia {

// Row-major real-valued matrix, the activation/weight carrier.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Same layout for fp16 activations.
class HalfMatrix {
public:
    HalfMatrix() = default;
    HalfMatrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }

    Half& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    Half operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    std::span<Half> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const Half> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<Half>& data() { return data_; }
    const std::vector<Half>& data() const { return data_; }

private:
    size_t rows_ = 0, cols_ = 0;
    std::vector<Half> data_;
};

// Rounds every entry to fp16 (nearest-even); counts saturated entries.
HalfMatrix to_half(const Matrix& m, size_t* saturated = nullptr);
Matrix to_real(const HalfMatrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

struct ErrorStats {
    double mse = 0.0;
    double max_abs = 0.0;
    double max_rel = 0.0; // per-element, over reference elements != 0
};

ErrorStats error_stats(const Matrix& reference, const Matrix& got);

// max |delta| normalized by the reference's max magnitude; the per-element
// metric used by the gemm/pipeline accuracy bounds
double max_scaled_error(const Matrix& reference, const Matrix& got);
double mean_scaled_error(const Matrix& reference, const Matrix& got);

} // namespace harmonia
