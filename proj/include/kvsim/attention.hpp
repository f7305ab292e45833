#pragma once

#include <span>
#include <vector>

#include "kvsim/matrix.hpp"

namespace kvsim {

struct AttentionOutput {
    std::vector<double> values;
    // Set when a sink/recent window request exceeded the sequence length and
    // was clamped to the available tokens.
    bool window_clamped = false;
};

struct CosineResult {
    double value = 0.0;
    // True when either input had zero norm; value is defined as 0 then.
    bool degenerate = false;
};

// Scaled-dot-product attention of one query over all rows of keys/values.
// Scores are q . K_j / sqrt(d_k); softmax subtracts the max score before
// exponentiating; accumulation is in double regardless of modeled storage.
AttentionOutput full_attention(std::span<const double> q, const Matrix& keys,
                               const Matrix& values);

// Indices of the k largest dot products q . K_j, ties broken toward the lower
// index, result sorted ascending. Invariant under positive scaling of q.
std::vector<int> topk_select_exact(std::span<const double> q, const Matrix& keys, int k);

// Attention restricted to the given token indices (non-empty, duplicate-free,
// in range). With the full ascending index set this equals full_attention
// bit for bit: it runs the same kernel over the same rows in the same order.
AttentionOutput topk_attention(std::span<const double> q, const Matrix& keys,
                               const Matrix& values, std::span<const int> indices);

// Union of the first sink_count and last recent_count token indices, sorted
// ascending. Sets *clamped when the requested windows exceed n and were cut.
std::vector<int> sink_recent_indices(int n, int sink_count, int recent_count,
                                     bool* clamped = nullptr);

// Attention over the sink/recent window only.
AttentionOutput streaming_attention(std::span<const double> q, const Matrix& keys,
                                    const Matrix& values, int sink_count, int recent_count);

// alpha * full_attention + (1 - alpha) * streaming_attention, alpha in [0, 1].
AttentionOutput blended_attention(std::span<const double> q, const Matrix& keys,
                                  const Matrix& values, double alpha, int sink_count,
                                  int recent_count);

// Cosine similarity; zero-norm inputs give value 0 with the degenerate flag
// set instead of NaN. Finite result is clamped to [-1, 1].
CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace kvsim
