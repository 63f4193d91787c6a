#include "harmonia/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "harmonia/error.hpp"

namespace harmonia {

HalfMatrix to_half(const Matrix& m, size_t* saturated) {
    HalfMatrix out(m.rows(), m.cols());
    size_t sat = 0;
    for (size_t i = 0; i < m.rows() * m.cols(); ++i) {
        bool ov = false;
        out.data()[i] = Half::from_double(m.data()[i], &ov);
        sat += ov ? 1 : 0;
    }
    if (saturated) *saturated = sat;
    return out;
}

Matrix to_real(const HalfMatrix& m) {
    Matrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows() * m.cols(); ++i) {
        out.data()[i] = m.data()[i].to_double();
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) raise(Errc::shape, "matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t k = 0; k < a.cols(); ++k) {
            double av = a(i, k);
            if (av == 0.0) continue;
            for (size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += av * b(k, j);
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) {
            t(c, r) = m(r, c);
        }
    }
    return t;
}

ErrorStats error_stats(const Matrix& reference, const Matrix& got) {
    if (reference.rows() != got.rows() || reference.cols() != got.cols())
        raise(Errc::shape, "error_stats: shape mismatch");
    ErrorStats s;
    size_t n = reference.rows() * reference.cols();
    if (n == 0) return s;
    double sum_sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double ref = reference.data()[i];
        double d = std::fabs(got.data()[i] - ref);
        sum_sq += d * d;
        s.max_abs = std::max(s.max_abs, d);
        if (ref != 0.0) s.max_rel = std::max(s.max_rel, d / std::fabs(ref));
    }
    s.mse = sum_sq / static_cast<double>(n);
    return s;
}

namespace {
double max_abs_value(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data()) v = std::max(v, std::fabs(x));
    return v;
}
} // namespace

double max_scaled_error(const Matrix& reference, const Matrix& got) {
    ErrorStats s = error_stats(reference, got);
    double scale = max_abs_value(reference);
    return scale == 0.0 ? s.max_abs : s.max_abs / scale;
}

double mean_scaled_error(const Matrix& reference, const Matrix& got) {
    if (reference.rows() != got.rows() || reference.cols() != got.cols())
        raise(Errc::shape, "mean_scaled_error: shape mismatch");
    double scale = max_abs_value(reference);
    if (scale == 0.0) scale = 1.0;
    double sum = 0.0;
    size_t n = reference.rows() * reference.cols();
    for (size_t i = 0; i < n; ++i) {
        sum += std::fabs(got.data()[i] - reference.data()[i]);
    }
    return n ? sum / (static_cast<double>(n) * scale) : 0.0;
}

} // namespace harmonia
