#include "harmonia/kvcache.hpp"

#include <algorithm>

#include "harmonia/error.hpp"

namespace harmonia {

void KvPolicy::validate() const {
    if (m_low > m_high) raise(Errc::invalid_argument, "KvPolicy: m_low must not exceed m_high");
    if (m_low < 1 || m_high > 10) raise(Errc::invalid_argument, "KvPolicy: mantissa widths out of range");
    if (group_size < 1 || group_size > BfpGroup::kMaxSize)
        raise(Errc::invalid_argument, "KvPolicy: bad group size");
}

namespace {

// number of tokens tagged high under the initial/local windows
size_t high_tokens(size_t T, const KvPolicy& p) {
    size_t from_initial = std::min(T, p.initial_tokens);
    size_t past_initial = T > p.initial_tokens ? T - p.initial_tokens : 0;
    return from_initial + std::min(p.local_tokens, past_initial);
}

size_t local_blocks(const KvPolicy& p) { return (p.local_tokens + p.group_size - 1) / p.group_size; }

bool v_block_high(size_t block, size_t num_blocks, const KvPolicy& p) {
    if ((block + 1) * p.group_size <= p.initial_tokens) return true; // fully inside the initial window
    size_t lb = local_blocks(p);
    return block + lb >= num_blocks;
}

} // namespace

KvStorageBreakdown storage_bits_closed_form(size_t tokens, size_t channels, const KvPolicy& policy) {
    policy.validate();
    const double C = static_cast<double>(channels);
    const size_t g = policy.group_size;
    const size_t T = tokens;

    KvStorageBreakdown b;
    // K: per-token groups, exact token tags
    size_t hk = high_tokens(T, policy);
    b.k_bits = C * (static_cast<double>(hk) * (1 + policy.m_high) +
                    static_cast<double>(T - hk) * (1 + policy.m_low));
    if (policy.count_shared_exponent) b.k_bits += static_cast<double>(T) * (C / g) * 5.0;

    // V: full blocks at group granularity plus the residual
    size_t nf = T / g;
    size_t r = T % g;
    size_t high_blocks = 0;
    for (size_t blk = 0; blk < nf; ++blk) high_blocks += v_block_high(blk, nf, policy) ? 1 : 0;
    b.v_bits = C * (static_cast<double>(high_blocks) * g * (1 + policy.m_high) +
                    static_cast<double>(nf - high_blocks) * g * (1 + policy.m_low) +
                    static_cast<double>(r) * (1 + policy.m_high));
    if (policy.count_shared_exponent) b.v_bits += C * static_cast<double>(nf + (r > 0 ? 1 : 0)) * 5.0;

    b.total_bits = b.k_bits + b.v_bits;
    b.elements = 2.0 * static_cast<double>(T) * C;
    b.mean_bits_per_element = b.elements > 0 ? b.total_bits / b.elements : 0.0;
    b.compression_vs_fp16 = b.mean_bits_per_element > 0 ? 16.0 / b.mean_bits_per_element : 0.0;
    return b;
}

double mean_bits_per_element(size_t tokens, const KvPolicy& policy) {
    policy.validate();
    if (tokens == 0) return 0.0;
    size_t hk = high_tokens(tokens, policy);
    double bits = static_cast<double>(hk) * (1 + policy.m_high) +
                  static_cast<double>(tokens - hk) * (1 + policy.m_low);
    double mean = bits / static_cast<double>(tokens);
    if (policy.count_shared_exponent) mean += 5.0 / static_cast<double>(policy.group_size);
    return mean;
}

double uniform_size_fraction(int mantissa_bits, bool count_shared_exponent, size_t group_size) {
    double bits = 1.0 + mantissa_bits;
    if (count_shared_exponent) bits += 5.0 / static_cast<double>(group_size);
    return bits / 16.0;
}

HighPrecisionFraction high_precision_fraction(size_t tokens, const KvPolicy& policy) {
    policy.validate();
    HighPrecisionFraction f;
    size_t windows = policy.initial_tokens + policy.local_tokens;
    if (tokens < windows) {
        f.all_high = true;
        f.fraction = 1.0;
        return f;
    }
    f.fraction = tokens > 0 ? static_cast<double>(windows) / static_cast<double>(tokens) : 1.0;
    return f;
}

int policy_k_tag(size_t token, size_t tokens, const KvPolicy& policy) {
    bool high = token < policy.initial_tokens || token + policy.local_tokens >= tokens;
    return high ? policy.m_high : policy.m_low;
}

int policy_v_tag(size_t block, size_t num_blocks, const KvPolicy& policy) {
    return v_block_high(block, num_blocks, policy) ? policy.m_high : policy.m_low;
}

KvCacheStore::KvCacheStore(size_t channels, const KvPolicy& policy)
    : channels_(channels), policy_(policy),
      v_state_(channels, BfpConfig{policy.group_size, policy.m_high}) {
    policy.validate();
    if (channels % policy.group_size != 0)
        raise(Errc::layout, "KvCacheStore: hidden width must be group aligned");
    k_frontier_ = policy.initial_tokens;
}

int KvCacheStore::k_tag(size_t token) const { return policy_k_tag(token, token_count_, policy_); }

int KvCacheStore::v_block_tag(size_t block) const { return policy_v_tag(block, v_tags_.size(), policy_); }

void KvCacheStore::append_kv(std::span<const Half> k_row, std::span<const Half> v_row) {
    if (k_row.size() != channels_ || v_row.size() != channels_)
        raise(Errc::shape, "append_kv: row width mismatch");

    const BfpConfig high_cfg{policy_.group_size, policy_.m_high};
    const BfpConfig low_cfg{policy_.group_size, policy_.m_low};
    const size_t t = token_count_;
    // the newest token is inside the local window whenever local_tokens > 0
    bool high = t < policy_.initial_tokens || policy_.local_tokens > 0;
    const BfpConfig& cfg = high ? high_cfg : low_cfg;

    KEntry entry;
    entry.mantissa_bits = cfg.mantissa_bits;
    entry.groups.reserve(channels_ / policy_.group_size);
    for (size_t j = 0; j < channels_ / policy_.group_size; ++j) {
        entry.groups.push_back(convert_group(k_row.subspan(j * policy_.group_size, policy_.group_size), cfg));
    }
    k_.push_back(std::move(entry));

    auto committed = v_state_.append_token(v_row);
    if (!committed.empty()) v_tags_.push_back(policy_.m_high);

    token_count_ += 1;
    demote_exited();
}

void KvCacheStore::demote_exited() {
    // K tokens exit the local window strictly in order, so a frontier cursor
    // visits each token once
    while (k_frontier_ + policy_.local_tokens < token_count_) {
        KEntry& e = k_[k_frontier_];
        if (e.mantissa_bits > policy_.m_low) {
            for (BfpGroup& g : e.groups) g = truncate_mantissas(g, policy_.m_low);
            e.mantissa_bits = policy_.m_low;
        }
        ++k_frontier_;
    }
    // V blocks that fell out of the trailing window
    for (size_t b = 0; b < v_tags_.size(); ++b) {
        int want = v_block_tag(b);
        if (v_tags_[b] > want) {
            BfpTensor& committed = v_state_.committed_mut();
            for (size_t c = 0; c < channels_; ++c) {
                committed.group(b, c) = truncate_mantissas(committed.group(b, c), want);
            }
            v_tags_[b] = want;
        }
    }
}

std::vector<KvCacheStore::KTokenView> KvCacheStore::read_k(size_t first, size_t last) const {
    if (first > last || last > token_count_) raise(Errc::invalid_argument, "read_k: range out of bounds");
    std::vector<KTokenView> out;
    out.reserve(last - first);
    for (size_t t = first; t < last; ++t) {
        out.push_back(KTokenView{{k_[t].groups.data(), k_[t].groups.size()}, k_[t].mantissa_bits});
    }
    return out;
}

VColumnsView KvCacheStore::read_v() const {
    VColumnsView v;
    const BfpTensor& committed = v_state_.committed();
    v.blocks.reserve(v_tags_.size());
    v.block_mantissa_bits.reserve(v_tags_.size());
    for (size_t b = 0; b < v_tags_.size(); ++b) {
        v.blocks.push_back(std::span<const BfpGroup>(&committed.group(b, 0), channels_));
        v.block_mantissa_bits.push_back(v_tags_[b]);
    }
    v.residual = v_state_.residual_view();
    v.residual_len = v_state_.residual_rows();
    return v;
}

KvStorageBreakdown KvCacheStore::storage_bits() const {
    KvStorageBreakdown b;
    for (const KEntry& e : k_) {
        for (const BfpGroup& g : e.groups) {
            b.k_bits += static_cast<double>(g.size()) * (1 + g.mantissa_bits());
            if (policy_.count_shared_exponent) b.k_bits += 5.0;
        }
    }
    const BfpTensor& committed = v_state_.committed();
    for (size_t blk = 0; blk < v_tags_.size(); ++blk) {
        for (size_t c = 0; c < channels_; ++c) {
            const BfpGroup& g = committed.group(blk, c);
            b.v_bits += static_cast<double>(g.size()) * (1 + g.mantissa_bits());
            if (policy_.count_shared_exponent) b.v_bits += 5.0;
        }
    }
    for (const BfpGroup& g : v_state_.residual_view()) {
        b.v_bits += static_cast<double>(g.size()) * (1 + g.mantissa_bits());
        if (policy_.count_shared_exponent) b.v_bits += 5.0;
    }
    b.total_bits = b.k_bits + b.v_bits;
    b.elements = 2.0 * static_cast<double>(token_count_) * static_cast<double>(channels_);
    b.mean_bits_per_element = b.elements > 0 ? b.total_bits / b.elements : 0.0;
    b.compression_vs_fp16 = b.mean_bits_per_element > 0 ? 16.0 / b.mean_bits_per_element : 0.0;
    return b;
}

} // namespace harmonia
