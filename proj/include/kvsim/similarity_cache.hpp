#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvsim/matrix.hpp"
#include "kvsim/retrieval.hpp"

namespace kvsim {

// Query label stored per query head: the group's queries at the last miss.
struct QueryLabel {
    std::vector<double> q;
    bool valid = false;
};

enum class MissReason { kNone, kInvalidLabel, kNonPositiveSimilarity, kBelowThreshold, kForcedMiss };

struct LookupResult {
    bool hit = false;
    double aggregated = 0.0;           // defined only when every sim is positive
    std::vector<double> sims;          // per group member, cosine vs. its label
    MissReason reason = MissReason::kNone;
};

// Importance-weighted aggregation of per-query-head similarities:
//   s = (sum_l w_l) / (sum_l w_l / sim_l)
// Requires every sim_l > 0 (callers gate on that); all-zero weights fall back
// to uniform so the result stays defined.
double aggregate_similarity(std::span<const double> sims, std::span<const double> weights);

// Fused hit test and label update for one KV head. Compares each group query
// against its stored label, aggregates with the per-query-head importance
// weights, and declares a Hit iff every similarity is positive, every label is
// valid, and the aggregate reaches tau. On Miss the labels are replaced by the
// probing queries before returning, so an immediate repeat of the same lookup
// hits with similarity 1.
LookupResult lookup(std::span<QueryLabel> labels, const std::vector<std::vector<double>>& queries,
                    std::span<const double> weights, double tau);

// Cached top-k selection of one offloaded KV head.
struct CacheEntry {
    std::vector<int> indices;  // ascending token indices
    Matrix k_rows;
    Matrix v_rows;
    int last_update_step = -1;
    bool last_lookup_hit = false;
};

// Replaces the whole entry after a Miss. Replacing an entry whose preceding
// lookup hit is a protocol violation and throws ContractError.
void update_entry(CacheEntry& entry, std::vector<int> indices, Matrix k_rows, Matrix v_rows,
                  int step);

// Device-resident sink/recent window. The first sink_count tokens of the
// sequence are pinned forever; the most recent recent_count tokens rotate
// through a ring. Never evicted by the similarity policy.
class SinkRecentBuffer {
  public:
    SinkRecentBuffer(int sink_count, int recent_count, int width);

    // Loads the prompt in one shot, as prefill does.
    void reset_from(const Matrix& keys, const Matrix& values);
    // Appends the newly decoded token's KV row; it enters the window
    // immediately.
    void advance(std::span<const double> k_row, std::span<const double> v_row);

    int tokens_seen() const { return tokens_seen_; }
    int held_tokens() const;
    // Sorted ascending union of sink and recent token indices.
    std::vector<int> token_indices() const;
    bool holds(int token) const;
    std::span<const double> k_row_of(int token) const;
    std::span<const double> v_row_of(int token) const;

    int sink_count() const { return sink_count_; }
    int recent_count() const { return recent_count_; }

  private:
    int slot_of(int token) const;

    int sink_count_;
    int recent_count_;
    int width_;
    int tokens_seen_ = 0;
    Matrix sink_k_, sink_v_;
    Matrix ring_k_, ring_v_;           // recent_count_ rows, token t in slot t % recent_count_
    std::vector<int> ring_token_;      // token id per slot, -1 when empty
};

// Per-head lookup bookkeeping surfaced in the cache state dump.
struct HeadCacheStats {
    uint64_t hit_count = 0;
    uint64_t miss_count = 0;
    int last_update_step = -1;
    std::vector<double> aggregated_history;
};

// Modeled device bytes of the similarity cache: per offloaded head the top-k
// KV rows (2 * k * d_k * bytes_per_element) plus its sink/recent rows, plus
// one label per query head per layer.
uint64_t cache_bytes(int offloaded_heads, int entry_k, int held_window_tokens, int num_layers,
                     int num_q_heads, int head_dim, int bytes_per_element);

// Merges per-query-head top-k proposals of one GQA group into a single set of
// exactly k token indices: union the proposals, rank by each index's best
// per-head score (ties toward the lower index), truncate to k, sort ascending.
std::vector<int> merge_group_topk(const std::vector<std::vector<ScoredIndex>>& proposals, int k);

}  // namespace kvsim
