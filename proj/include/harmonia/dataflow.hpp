#pragma once

#include <cstdint>
#include <string>

namespace harmonia {

enum class DataflowPolicy { column_first, row_first };

// M x K times K x N tiled as m x n output tiles. Tiles must divide the
// extents exactly.
struct GemmShape {
    uint64_t M = 0, K = 0, N = 0;
    uint64_t tile_m = 1, tile_n = 1;
    double bits_a = 16.0;
    double bits_b = 16.0;

    void validate() const;
};

inline constexpr double kHbm2PjPerBit = 3.9;

// column-first output flow: a weight column strip stays resident while all
// activations stream past -> (N/n)*M*K + K*N element fetches
uint64_t ema_column_first(const GemmShape& s);
// row-first: (M/m)*K*N + M*K
uint64_t ema_row_first(const GemmShape& s);

struct EmaReport {
    DataflowPolicy chosen_policy = DataflowPolicy::column_first;
    uint64_t column_first_elements = 0;
    uint64_t row_first_elements = 0;
    uint64_t elements_a = 0; // operand fetch split under the chosen policy
    uint64_t elements_b = 0;
    uint64_t total_elements = 0;
    double total_bits = 0.0;
    double energy_pj = 0.0;
};

// picks the strictly smaller element count; ties go column-first
EmaReport choose_policy(const GemmShape& s, double pj_per_bit = kHbm2PjPerBit);

// Loop-order simulation with an explicit residency rule; counts every
// off-chip element fetch. Oracle for the closed forms above.
uint64_t simulate_trace(const GemmShape& s, DataflowPolicy policy);

double energy_estimate(double total_bits, double pj_per_bit = kHbm2PjPerBit);

std::string to_string(DataflowPolicy p);

} // namespace harmonia
