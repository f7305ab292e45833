#include "kvsim/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kvsim {

namespace {

void check_qkv(std::span<const double> q, const Matrix& keys, const Matrix& values) {
    if (keys.rows != values.rows)
        throw ShapeError("keys and values must have the same number of rows");
    if (static_cast<int>(q.size()) != keys.cols)
        throw ShapeError("query width does not match key width");
    if (keys.rows == 0) throw ArgumentError("attention over an empty sequence");
    for (double v : q)
        if (!std::isfinite(v)) throw NumericError("non-finite query entry");
    for (double v : keys.data)
        if (!std::isfinite(v)) throw NumericError("non-finite key entry");
    for (double v : values.data)
        if (!std::isfinite(v)) throw NumericError("non-finite value entry");
}

double dot(std::span<const double> a, const double* b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Shared kernel: softmax over the scores of the listed rows, then the
// weighted sum of the matching value rows. Callers validate indices.
AttentionOutput attend_rows(std::span<const double> q, const Matrix& keys,
                            const Matrix& values, std::span<const int> rows) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.cols));
    std::vector<double> scores(rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
        scores[i] = dot(q, keys.row(rows[i])) * inv_sqrt_d;

    const double max_score = *std::max_element(scores.begin(), scores.end());
    double denom = 0.0;
    for (double& s : scores) {
        s = std::exp(s - max_score);
        denom += s;
    }

    AttentionOutput out;
    out.values.assign(values.cols, 0.0);
    for (size_t i = 0; i < rows.size(); ++i) {
        const double w = scores[i] / denom;
        const double* v = values.row(rows[i]);
        for (int c = 0; c < values.cols; ++c) out.values[c] += w * v[c];
    }
    return out;
}

std::vector<int> iota_indices(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace

AttentionOutput full_attention(std::span<const double> q, const Matrix& keys,
                               const Matrix& values) {
    check_qkv(q, keys, values);
    return attend_rows(q, keys, values, iota_indices(keys.rows));
}

std::vector<int> topk_select_exact(std::span<const double> q, const Matrix& keys, int k) {
    if (static_cast<int>(q.size()) != keys.cols)
        throw ShapeError("query width does not match key width");
    if (k <= 0) throw ArgumentError("k must be positive");
    if (k > keys.rows) throw ArgumentError("k exceeds the number of keys");

    std::vector<double> scores(keys.rows);
    for (int j = 0; j < keys.rows; ++j) scores[j] = dot(q, keys.row(j));

    std::vector<int> idx = iota_indices(keys.rows);
    auto better = [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // ties toward the lower index
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

AttentionOutput topk_attention(std::span<const double> q, const Matrix& keys,
                               const Matrix& values, std::span<const int> indices) {
    check_qkv(q, keys, values);
    if (indices.empty()) throw ArgumentError("empty attention index set");
    std::vector<int> seen;
    seen.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || i >= keys.rows) throw IndexError("attention index out of range");
        seen.push_back(i);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw ArgumentError("duplicate attention index");
    return attend_rows(q, keys, values, indices);
}

std::vector<int> sink_recent_indices(int n, int sink_count, int recent_count, bool* clamped) {
    if (n <= 0) throw ArgumentError("sequence must be non-empty");
    if (sink_count < 0 || recent_count < 0)
        throw ArgumentError("window sizes must be non-negative");
    bool cut = false;
    int sink = sink_count;
    if (sink > n) {
        sink = n;
        cut = true;
    }
    int recent = recent_count;
    if (recent > n) {
        recent = n;
        cut = true;
    }
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(sink) + recent);
    for (int i = 0; i < sink; ++i) idx.push_back(i);
    for (int i = std::max(n - recent, sink); i < n; ++i) idx.push_back(i);
    if (clamped) *clamped = cut;
    return idx;
}

AttentionOutput streaming_attention(std::span<const double> q, const Matrix& keys,
                                    const Matrix& values, int sink_count, int recent_count) {
    check_qkv(q, keys, values);
    bool clamped = false;
    std::vector<int> idx = sink_recent_indices(keys.rows, sink_count, recent_count, &clamped);
    if (idx.empty()) throw ArgumentError("empty sink/recent window");
    AttentionOutput out = attend_rows(q, keys, values, idx);
    out.window_clamped = clamped;
    return out;
}

AttentionOutput blended_attention(std::span<const double> q, const Matrix& keys,
                                  const Matrix& values, double alpha, int sink_count,
                                  int recent_count) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
    AttentionOutput full = full_attention(q, keys, values);
    AttentionOutput stream = streaming_attention(q, keys, values, sink_count, recent_count);
    AttentionOutput out;
    out.values.resize(full.values.size());
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = alpha * full.values[i] + (1.0 - alpha) * stream.values[i];
    out.window_clamped = stream.window_clamped;
    return out;
}

CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine inputs must have equal length");
    if (a.empty()) throw ArgumentError("cosine of empty vectors");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return {0.0, true};
    double v = ab / (std::sqrt(aa) * std::sqrt(bb));
    v = std::clamp(v, -1.0, 1.0);
    return {v, false};
}

}  // namespace kvsim
