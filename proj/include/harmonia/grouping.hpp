#pragma once

#include <optional>
#include <span>
#include <vector>

#include "harmonia/bfp.hpp"
#include "harmonia/matrix.hpp"

namespace harmonia {

// Group layout over a T x C matrix.
//   per_token:   full groups only; group (t, j) covers channels
//                [j*g, (j+1)*g) of token t. Requires C % group_size == 0.
//   per_channel: group (b, c) covers tokens [b*g, (b+1)*g) of channel c;
//                the trailing T % g tokens live in one residual group per
//                channel.
class BfpTensor {
public:
    BfpTensor() = default;

    GroupingAxis axis() const { return axis_; }
    size_t tokens() const { return tokens_; }
    size_t channels() const { return channels_; }
    const BfpConfig& config() const { return cfg_; }

    size_t full_group_rows() const { return rows_; } // tokens (per_token) or token blocks (per_channel)
    size_t full_group_cols() const { return cols_; } // channel blocks (per_token) or channels (per_channel)

    BfpGroup& group(size_t r, size_t c) { return groups_[r * cols_ + c]; }
    const BfpGroup& group(size_t r, size_t c) const { return groups_[r * cols_ + c]; }

    size_t residual_len() const { return residual_len_; }
    bool has_residual() const { return residual_len_ > 0; }
    const BfpGroup& residual(size_t channel) const { return residual_[channel]; }
    BfpGroup& residual(size_t channel) { return residual_[channel]; }

    Matrix dequantize() const;

    bool bitwise_equal(const BfpTensor& other) const;

    friend BfpTensor group_tensor(const HalfMatrix&, GroupingAxis, const BfpConfig&);
    friend class IncrementalVState;
    friend class BfpFileCodec;

private:
    GroupingAxis axis_ = GroupingAxis::per_token;
    size_t tokens_ = 0, channels_ = 0;
    size_t rows_ = 0, cols_ = 0;
    BfpConfig cfg_;
    std::vector<BfpGroup> groups_;   // row-major (rows_ x cols_)
    std::vector<BfpGroup> residual_; // per_channel only; size channels_ when residual_len_ > 0
    size_t residual_len_ = 0;
};

BfpTensor group_tensor(const HalfMatrix& x, GroupingAxis axis, const BfpConfig& cfg);
// Rounds to fp16 first, then converts.
BfpTensor group_tensor(const Matrix& x, GroupingAxis axis, const BfpConfig& cfg);

// Incremental per-channel grouping for V: rows are appended one token at a
// time, the residual view is re-encoded from the buffered fp16 rows on every
// append, and a full block commits exactly the groups batch conversion would
// produce.
class IncrementalVState {
public:
    IncrementalVState() = default;
    IncrementalVState(size_t channels, const BfpConfig& cfg);

    // Returns the channel groups committed by this append (empty unless the
    // residual just reached group_size).
    std::span<const BfpGroup> append_token(std::span<const Half> v_row);

    size_t channels() const { return channels_; }
    size_t residual_rows() const { return residual_fp16_.size(); }
    size_t committed_tokens() const { return committed_.tokens(); }
    size_t total_tokens() const { return committed_.tokens() + residual_rows(); }

    const BfpTensor& committed() const { return committed_; }
    BfpTensor& committed_mut() { return committed_; } // precision demotion only

    // view over the buffered rows; empty when the residual is empty
    std::span<const BfpGroup> residual_view() const { return residual_view_; }

private:
    size_t channels_ = 0;
    BfpConfig cfg_;
    BfpTensor committed_;
    std::vector<std::vector<Half>> residual_fp16_; // buffered rows, < group_size
    std::vector<BfpGroup> residual_view_;          // one group per channel
    std::vector<BfpGroup> last_commit_;

    void reencode_residual();
};

// Per-token conversion path: results arrive one per step, the running max
// exponent is tracked as they stream, and a full group is aligned and emitted
// after group_size arrivals.
class TokenStreamConverter {
public:
    explicit TokenStreamConverter(const BfpConfig& cfg);

    std::optional<BfpGroup> push(Half value);
    // converts any buffered tail as a short group
    std::optional<BfpGroup> flush();

    int running_exponent() const { return running_exp_; }

private:
    BfpConfig cfg_;
    std::vector<Half> buffer_;
    int running_exp_ = -14;
};

// Per-channel conversion path: 32 results arrive as four batches of eight; a
// comparator tree reduces each batch, and the aligner then encodes the four
// 8-element subgroups against the final max exponent.
class ChannelStreamConverter {
public:
    explicit ChannelStreamConverter(const BfpConfig& cfg);

    std::optional<BfpGroup> push_batch(std::span<const Half> batch8);

private:
    BfpConfig cfg_;
    std::vector<Half> buffer_;
    int running_exp_ = -14;
    int batches_ = 0;
};

// Error metrics between x and dequantize(convert(x)) under the given axis.
ErrorStats quantization_error(const Matrix& x, const BfpConfig& cfg, GroupingAxis axis);

} // namespace harmonia
