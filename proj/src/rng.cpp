#include "harmonia/rng.hpp"

#include <cmath>

namespace harmonia {

double Rng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

Matrix Rng::gaussian_matrix(size_t rows, size_t cols, double stddev, double mean) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = mean + stddev * gaussian();
    return m;
}

} // namespace harmonia
