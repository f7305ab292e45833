#include "kvsim/similarity_cache.hpp"

#include <algorithm>
#include <map>

#include "kvsim/attention.hpp"

namespace kvsim {

double aggregate_similarity(std::span<const double> sims, std::span<const double> weights) {
    if (sims.empty() || sims.size() != weights.size())
        throw ShapeError("similarity and weight counts must match and be non-empty");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ArgumentError("importance weights must be non-negative");
        wsum += w;
    }
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < sims.size(); ++i) {
        if (sims[i] <= 0.0)
            throw ArgumentError("aggregation requires strictly positive similarities");
        const double w = wsum > 0.0 ? weights[i] : 1.0;
        num += w;
        den += w / sims[i];
    }
    return num / den;
}

LookupResult lookup(std::span<QueryLabel> labels, const std::vector<std::vector<double>>& queries,
                    std::span<const double> weights, double tau) {
    if (labels.size() != queries.size() || queries.size() != weights.size())
        throw ShapeError("labels, queries and weights must have equal group size");
    if (queries.empty()) throw ArgumentError("empty lookup group");

    LookupResult res;
    res.sims.resize(queries.size(), 0.0);

    bool all_valid = true;
    bool all_positive = true;
    for (size_t l = 0; l < queries.size(); ++l) {
        if (!labels[l].valid) {
            all_valid = false;
            continue;
        }
        CosineResult cs = cosine_similarity(queries[l], labels[l].q);
        res.sims[l] = cs.value;
        if (cs.degenerate || cs.value <= 0.0) all_positive = false;
    }

    if (!all_valid) {
        res.reason = MissReason::kInvalidLabel;
    } else if (!all_positive) {
        res.reason = MissReason::kNonPositiveSimilarity;
    } else {
        res.aggregated = aggregate_similarity(res.sims, weights);
        if (res.aggregated >= tau) {
            res.hit = true;
        } else {
            res.reason = MissReason::kBelowThreshold;
        }
    }

    if (!res.hit) {
        // Fused label refresh: the probing queries become the new labels
        // within the same operation, never as a separate staged write.
        for (size_t l = 0; l < queries.size(); ++l) {
            labels[l].q = queries[l];
            labels[l].valid = true;
        }
    }
    return res;
}

void update_entry(CacheEntry& entry, std::vector<int> indices, Matrix k_rows, Matrix v_rows,
                  int step) {
    if (entry.last_lookup_hit)
        throw ContractError("entry replacement after a Hit lookup");
    if (indices.empty()) throw ArgumentError("entry must hold at least one index");
    if (k_rows.rows != static_cast<int>(indices.size()) || v_rows.rows != k_rows.rows)
        throw ShapeError("entry rows must match the index count");
    if (!std::is_sorted(indices.begin(), indices.end()))
        throw ArgumentError("entry indices must be sorted ascending");
    entry.indices = std::move(indices);
    entry.k_rows = std::move(k_rows);
    entry.v_rows = std::move(v_rows);
    entry.last_update_step = step;
}

SinkRecentBuffer::SinkRecentBuffer(int sink_count, int recent_count, int width)
    : sink_count_(sink_count),
      recent_count_(recent_count),
      width_(width),
      sink_k_(0, width),
      sink_v_(0, width),
      ring_k_(recent_count, width),
      ring_v_(recent_count, width),
      ring_token_(static_cast<size_t>(std::max(recent_count, 0)), -1) {
    if (sink_count < 0 || recent_count < 0)
        throw ArgumentError("window sizes must be non-negative");
    if (width <= 0) throw ArgumentError("row width must be positive");
}

void SinkRecentBuffer::reset_from(const Matrix& keys, const Matrix& values) {
    if (keys.rows != values.rows || keys.cols != width_ || values.cols != width_)
        throw ShapeError("prompt KV shape does not match buffer width");
    sink_k_ = Matrix(0, width_);
    sink_v_ = Matrix(0, width_);
    std::fill(ring_token_.begin(), ring_token_.end(), -1);
    tokens_seen_ = 0;
    for (int t = 0; t < keys.rows; ++t) advance(keys.row_span(t), values.row_span(t));
}

void SinkRecentBuffer::advance(std::span<const double> k_row, std::span<const double> v_row) {
    if (static_cast<int>(k_row.size()) != width_ || static_cast<int>(v_row.size()) != width_)
        throw ShapeError("KV row width does not match buffer width");
    const int token = tokens_seen_;
    if (token < sink_count_) {
        sink_k_.append_row(k_row);
        sink_v_.append_row(v_row);
    }
    if (recent_count_ > 0) {
        const int slot = token % recent_count_;
        ring_token_[slot] = token;
        std::copy(k_row.begin(), k_row.end(), ring_k_.row(slot));
        std::copy(v_row.begin(), v_row.end(), ring_v_.row(slot));
    }
    ++tokens_seen_;
}

int SinkRecentBuffer::held_tokens() const {
    const int n = tokens_seen_;
    const int sink = std::min(n, sink_count_);
    const int recent = std::min(n - sink, recent_count_);
    return sink + recent;
}

std::vector<int> SinkRecentBuffer::token_indices() const {
    bool clamped = false;
    if (tokens_seen_ == 0) return {};
    return sink_recent_indices(tokens_seen_, sink_count_, recent_count_, &clamped);
}

int SinkRecentBuffer::slot_of(int token) const {
    if (token < 0 || token >= tokens_seen_) return -1;
    if (token < sink_count_) return -2;  // sink rows are addressed directly
    if (recent_count_ == 0) return -1;
    const int slot = token % recent_count_;
    return ring_token_[slot] == token ? slot : -1;
}

bool SinkRecentBuffer::holds(int token) const { return slot_of(token) != -1; }

std::span<const double> SinkRecentBuffer::k_row_of(int token) const {
    const int slot = slot_of(token);
    if (slot == -2) return sink_k_.row_span(token);
    if (slot < 0) throw IndexError("token not resident in sink/recent buffer");
    return ring_k_.row_span(slot);
}

std::span<const double> SinkRecentBuffer::v_row_of(int token) const {
    const int slot = slot_of(token);
    if (slot == -2) return sink_v_.row_span(token);
    if (slot < 0) throw IndexError("token not resident in sink/recent buffer");
    return ring_v_.row_span(slot);
}

uint64_t cache_bytes(int offloaded_heads, int entry_k, int held_window_tokens, int num_layers,
                     int num_q_heads, int head_dim, int bytes_per_element) {
    if (offloaded_heads < 0 || entry_k < 0 || held_window_tokens < 0)
        throw ArgumentError("byte accounting inputs must be non-negative");
    const uint64_t per_entry =
        2ULL * entry_k * head_dim * bytes_per_element;
    const uint64_t per_window =
        2ULL * held_window_tokens * head_dim * bytes_per_element;
    const uint64_t labels =
        static_cast<uint64_t>(num_layers) * num_q_heads * head_dim * bytes_per_element;
    return static_cast<uint64_t>(offloaded_heads) * (per_entry + per_window) + labels;
}

std::vector<int> merge_group_topk(const std::vector<std::vector<ScoredIndex>>& proposals, int k) {
    if (k <= 0) throw ArgumentError("k must be positive");
    if (proposals.empty()) throw ArgumentError("no proposals to merge");
    std::map<int, double> best;
    for (const auto& prop : proposals)
        for (const ScoredIndex& si : prop) {
            auto [it, inserted] = best.emplace(si.index, si.score);
            if (!inserted && si.score > it->second) it->second = si.score;
        }
    if (static_cast<int>(best.size()) < k)
        throw ArgumentError("merged union smaller than k");
    std::vector<std::pair<int, double>> ranked(best.begin(), best.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    ranked.resize(k);
    std::vector<int> out(ranked.size());
    for (size_t i = 0; i < ranked.size(); ++i) out[i] = ranked[i].first;
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace kvsim
