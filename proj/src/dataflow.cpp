#include "harmonia/dataflow.hpp"

#include "harmonia/error.hpp"

namespace harmonia {

void GemmShape::validate() const {
    if (M == 0 || K == 0 || N == 0) raise(Errc::invalid_argument, "GemmShape: extents must be positive");
    if (tile_m == 0 || tile_n == 0) raise(Errc::invalid_argument, "GemmShape: tiles must be positive");
    if (M % tile_m != 0) raise(Errc::tiling, "GemmShape: tile_m must divide M");
    if (N % tile_n != 0) raise(Errc::tiling, "GemmShape: tile_n must divide N");
}

uint64_t ema_column_first(const GemmShape& s) {
    s.validate();
    return (s.N / s.tile_n) * (s.M * s.K) + s.K * s.N;
}

uint64_t ema_row_first(const GemmShape& s) {
    s.validate();
    return (s.M / s.tile_m) * (s.K * s.N) + s.M * s.K;
}

EmaReport choose_policy(const GemmShape& s, double pj_per_bit) {
    EmaReport r;
    r.column_first_elements = ema_column_first(s);
    r.row_first_elements = ema_row_first(s);
    r.chosen_policy = (r.row_first_elements < r.column_first_elements) ? DataflowPolicy::row_first
                                                                       : DataflowPolicy::column_first;
    if (r.chosen_policy == DataflowPolicy::column_first) {
        r.elements_a = (s.N / s.tile_n) * (s.M * s.K); // activations re-fetched per column strip
        r.elements_b = s.K * s.N;
        r.total_elements = r.column_first_elements;
    } else {
        r.elements_a = s.M * s.K;
        r.elements_b = (s.M / s.tile_m) * (s.K * s.N);
        r.total_elements = r.row_first_elements;
    }
    r.total_bits = static_cast<double>(r.elements_a) * s.bits_a + static_cast<double>(r.elements_b) * s.bits_b;
    r.energy_pj = energy_estimate(r.total_bits, pj_per_bit);
    return r;
}

uint64_t simulate_trace(const GemmShape& s, DataflowPolicy policy) {
    s.validate();
    uint64_t fetches = 0;
    if (policy == DataflowPolicy::column_first) {
        // B column strip is resident until every activation row has passed
        for (uint64_t strip = 0; strip < s.N / s.tile_n; ++strip) {
            fetches += s.K * s.tile_n; // load the strip of B
            for (uint64_t row = 0; row < s.M; ++row) {
                fetches += s.K; // stream one activation row
            }
        }
        return fetches;
    }
    // row-first: an activation row strip is resident until all weights passed
    for (uint64_t strip = 0; strip < s.M / s.tile_m; ++strip) {
        fetches += s.tile_m * s.K; // load the strip of A
        for (uint64_t col = 0; col < s.N; ++col) {
            fetches += s.K; // stream one weight column
        }
    }
    return fetches;
}

double energy_estimate(double total_bits, double pj_per_bit) {
    if (total_bits < 0) raise(Errc::invalid_argument, "energy_estimate: negative bits");
    return total_bits * pj_per_bit;
}

std::string to_string(DataflowPolicy p) {
    return p == DataflowPolicy::column_first ? "column_first" : "row_first";
}

} // namespace harmonia
