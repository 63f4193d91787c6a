#pragma once

#include <span>
#include <vector>

#include "harmonia/grouping.hpp"
#include "harmonia/pe.hpp"

namespace harmonia {

// Precision regions over the token axis: the first `initial_tokens` and the
// most recent `local_tokens` keep m_high mantissas, everything in between is
// demoted to m_low by truncation.
struct KvPolicy {
    size_t initial_tokens = 32;
    size_t local_tokens = 64;
    int m_high = 8;
    int m_low = 4;
    size_t group_size = 32;
    bool count_shared_exponent = true;

    void validate() const;
};

struct KvStorageBreakdown {
    double k_bits = 0.0;
    double v_bits = 0.0;
    double total_bits = 0.0;
    double elements = 0.0;
    double mean_bits_per_element = 0.0;
    double compression_vs_fp16 = 0.0; // 16 / mean bits
};

// Closed-form storage accounting for T tokens of hidden width C: K counted
// per token, V at group granularity (full blocks plus the residual).
KvStorageBreakdown storage_bits_closed_form(size_t tokens, size_t channels, const KvPolicy& policy);

// Idealized per-token mean (both K and V counted by token tags); this is the
// headline bits/element figure.
double mean_bits_per_element(size_t tokens, const KvPolicy& policy);

// Uniform-precision size of a sign+mantissa cache relative to fp16.
double uniform_size_fraction(int mantissa_bits, bool count_shared_exponent, size_t group_size = 32);

struct HighPrecisionFraction {
    double fraction = 1.0;
    bool all_high = false; // T smaller than the two windows
};
HighPrecisionFraction high_precision_fraction(size_t tokens, const KvPolicy& policy);

// precision tag of K token t in a sequence of length T
int policy_k_tag(size_t token, size_t tokens, const KvPolicy& policy);
// precision tag of committed V block b when num_blocks blocks exist
int policy_v_tag(size_t block, size_t num_blocks, const KvPolicy& policy);

class KvCacheStore {
public:
    KvCacheStore() = default;
    KvCacheStore(size_t channels, const KvPolicy& policy);

    void append_kv(std::span<const Half> k_row, std::span<const Half> v_row);

    size_t token_count() const { return token_count_; }
    size_t channels() const { return channels_; }
    const KvPolicy& policy() const { return policy_; }

    struct KTokenView {
        std::span<const BfpGroup> groups;
        int mantissa_bits;
    };
    // stored K groups and precision tags for [first, last); read-only
    std::vector<KTokenView> read_k(size_t first, size_t last) const;

    int k_tag(size_t token) const;
    int v_block_tag(size_t block) const;
    size_t v_blocks() const { return v_tags_.size(); }

    // view over the V store for the context GEMM
    VColumnsView read_v() const;

    const IncrementalVState& v_state() const { return v_state_; }

    // entry-by-entry storage accounting of what is actually stored
    KvStorageBreakdown storage_bits() const;

private:
    size_t channels_ = 0;
    KvPolicy policy_;
    size_t token_count_ = 0;

    struct KEntry {
        std::vector<BfpGroup> groups;
        int mantissa_bits;
    };
    std::vector<KEntry> k_;
    size_t k_frontier_ = 0; // next K token to demote on window exit
    IncrementalVState v_state_;
    std::vector<int> v_tags_; // per committed block

    void demote_exited();
};

} // namespace harmonia
