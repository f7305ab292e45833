#include "kvsim/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "kvsim/rng.hpp"

namespace kvsim {

namespace {

void append_sign_row(RetrievalMetadata& meta, std::span<const double> key_row) {
    const int words = meta.words_per_row();
    std::vector<uint64_t> row(words, 0);
    for (int b = 0; b < meta.hash_bits; ++b) {
        double s = 0.0;
        const double* p = meta.projection.row(b);
        for (size_t c = 0; c < key_row.size(); ++c) s += p[c] * key_row[c];
        if (s >= 0.0) row[b / 64] |= (1ULL << (b % 64));
    }
    meta.bits.insert(meta.bits.end(), row.begin(), row.end());
    ++meta.encoded_rows;
}

int hamming_affinity(const uint64_t* a, const uint64_t* b, int words, int hash_bits) {
    int dist = 0;
    for (int w = 0; w < words; ++w) dist += std::popcount(a[w] ^ b[w]);
    return hash_bits - dist;
}

std::vector<ScoredIndex> select_topk(const std::vector<double>& scores, int k) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<ScoredIndex> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = {idx[i], scores[idx[i]]};
    return out;
}

}  // namespace

int RetrievalMetadata::rows() const {
    if (variant == RetrieverVariant::kExact) return keys ? keys->rows : 0;
    return encoded_rows;
}

uint64_t RetrievalMetadata::metadata_bytes() const {
    if (variant == RetrieverVariant::kExact) return sizeof(void*);
    return static_cast<uint64_t>(encoded_rows) * (static_cast<uint64_t>(hash_bits) / 8);
}

RetrievalMetadata encode(const Matrix& keys, RetrieverVariant variant, int hash_bits,
                         uint64_t seed) {
    RetrievalMetadata meta;
    meta.variant = variant;
    if (variant == RetrieverVariant::kExact) {
        meta.keys = &keys;
        return meta;
    }
    if (hash_bits <= 0 || hash_bits % 8 != 0)
        throw ArgumentError("hash_bits must be a positive multiple of 8");
    meta.hash_bits = hash_bits;
    meta.seed = seed;
    meta.projection = Matrix(hash_bits, keys.cols);
    std::mt19937_64 gen(seed);
    fill_normal(gen, meta.projection.data);
    meta.bits.reserve(static_cast<size_t>(keys.rows) * meta.words_per_row());
    for (int j = 0; j < keys.rows; ++j) append_sign_row(meta, keys.row_span(j));
    return meta;
}

void update_metadata(RetrievalMetadata& meta, std::span<const double> new_key_row) {
    if (meta.variant == RetrieverVariant::kExact) {
        // The referenced key matrix already holds the new row; nothing stored.
        return;
    }
    if (static_cast<int>(new_key_row.size()) != meta.projection.cols)
        throw ShapeError("key row width does not match encoded width");
    append_sign_row(meta, new_key_row);
}

std::vector<ScoredIndex> retrieve_scored(std::span<const double> q,
                                         const RetrievalMetadata& meta, int k) {
    const int n = meta.rows();
    if (k <= 0) throw ArgumentError("k must be positive");
    if (k > n) throw ArgumentError("k exceeds the number of encoded keys");

    if (meta.variant == RetrieverVariant::kExact) {
        const Matrix& keys = *meta.keys;
        if (static_cast<int>(q.size()) != keys.cols)
            throw ShapeError("query width does not match key width");
        std::vector<double> scores(n);
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            const double* kr = keys.row(j);
            for (size_t c = 0; c < q.size(); ++c) s += q[c] * kr[c];
            scores[j] = s;
        }
        return select_topk(scores, k);
    }

    if (static_cast<int>(q.size()) != meta.projection.cols)
        throw ShapeError("query width does not match encoded width");
    const int words = meta.words_per_row();
    std::vector<uint64_t> qbits(words, 0);
    for (int b = 0; b < meta.hash_bits; ++b) {
        double s = 0.0;
        const double* p = meta.projection.row(b);
        for (size_t c = 0; c < q.size(); ++c) s += p[c] * q[c];
        if (s >= 0.0) qbits[b / 64] |= (1ULL << (b % 64));
    }
    std::vector<double> scores(n);
    for (int j = 0; j < n; ++j)
        scores[j] = hamming_affinity(qbits.data(), meta.bits.data() + static_cast<size_t>(j) * words,
                                     words, meta.hash_bits);
    return select_topk(scores, k);
}

std::vector<int> retrieve(std::span<const double> q, const RetrievalMetadata& meta, int k) {
    std::vector<ScoredIndex> scored = retrieve_scored(q, meta, k);
    std::vector<int> out(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) out[i] = scored[i].index;
    return out;
}

}  // namespace kvsim
