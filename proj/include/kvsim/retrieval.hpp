#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvsim/matrix.hpp"

namespace kvsim {

enum class RetrieverVariant { kExact, kSignHash };

struct ScoredIndex {
    int index = 0;
    double score = 0.0;
};

// Per-head retrieval metadata. The exact variant keeps a non-owning reference
// to the live key matrix (the host store outlives it); the sign-hash variant
// owns a packed bit matrix plus the seeded projection that generated it.
struct RetrievalMetadata {
    RetrieverVariant variant = RetrieverVariant::kExact;
    const Matrix* keys = nullptr;

    int hash_bits = 0;
    uint64_t seed = 0;
    Matrix projection;                        // hash_bits x d_k
    std::vector<uint64_t> bits;               // rows() x words_per_row(), row-major
    int encoded_rows = 0;

    int rows() const;
    int words_per_row() const { return (hash_bits + 63) / 64; }
    // Modeled metadata footprint: a pointer-sized constant for exact,
    // hash_bits per key for sign-hash. The projection is regenerable from the
    // seed and is not counted.
    uint64_t metadata_bytes() const;
};

// Builds metadata for a key matrix. hash_bits and seed are ignored by the
// exact variant. Sign bit b of key row j is 1 iff P_b . K_j >= 0, with P
// drawn once from a seeded standard normal; bits are invariant under positive
// scaling of the key (and of the query at retrieve time).
RetrievalMetadata encode(const Matrix& keys, RetrieverVariant variant, int hash_bits = 256,
                         uint64_t seed = 0);

// Appends one key row to the metadata; equivalent to re-encoding the extended
// matrix with the same seed. The exact variant tracks the row count only (it
// reads rows straight from the referenced matrix, which has already grown).
void update_metadata(RetrievalMetadata& meta, std::span<const double> new_key_row);

// Top-k candidate indices for a query, sorted ascending. Exact scores are raw
// dot products; sign-hash scores are Hamming affinities (hash_bits minus the
// Hamming distance between query and key bit rows). Ties toward lower index.
std::vector<int> retrieve(std::span<const double> q, const RetrievalMetadata& meta, int k);

// Same selection, but returns the retriever's scores alongside the indices
// (needed to merge per-query-head proposals within a GQA group).
std::vector<ScoredIndex> retrieve_scored(std::span<const double> q,
                                         const RetrievalMetadata& meta, int k);

}  // namespace kvsim
