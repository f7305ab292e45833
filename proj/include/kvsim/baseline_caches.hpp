#pragma once

#include <cstdint>
#include <list>
#include <span>
#include <unordered_map>
#include <vector>

#include "kvsim/errors.hpp"

namespace kvsim {

enum class BlockPolicy { kLru, kLfu };

// Result of a read-only lookup: which blocks of the requested token set are
// resident and which must be fetched from host memory.
struct AccessPlan {
    std::vector<int> hit_blocks;   // ascending
    std::vector<int> miss_blocks;  // ascending
};

struct BlockCacheCounters {
    uint64_t lookups = 0;
    uint64_t block_hits = 0;
    uint64_t block_misses = 0;
    uint64_t metadata_updates = 0;
    uint64_t buffer_merge_bytes = 0;
    uint64_t evictions = 0;
};

// Block-granularity GPU cache of one KV head, replacement by LRU or LFU over
// CPU-side list metadata. Tokens map to block token/block_size; a step's
// access plan is computed first (pure), then applied with the fetched blocks.
class BlockCache {
  public:
    BlockCache(BlockPolicy policy, int block_size, int capacity_blocks,
               uint64_t bytes_per_block);

    // Copies rebuild the recency iterators so the copy owns its own list.
    BlockCache(const BlockCache& other);
    BlockCache& operator=(const BlockCache& other);
    BlockCache(BlockCache&&) = default;
    BlockCache& operator=(BlockCache&&) = default;

    // Partitions the deduplicated blocks covering token_indices into hits and
    // misses. Does not touch cache state.
    AccessPlan lookup(std::span<const int> token_indices) const;

    // Applies one step: promotes/recounts the hit blocks, inserts the fetched
    // miss blocks (evicting per policy when full), and accounts the merge
    // traffic. fetched_blocks must equal the plan's miss set.
    void update(const AccessPlan& plan, std::span<const int> fetched_blocks);

    const BlockCacheCounters& counters() const { return counters_; }
    int block_size() const { return block_size_; }
    int capacity_blocks() const { return capacity_blocks_; }
    uint64_t bytes_per_block() const { return bytes_per_block_; }
    int resident_blocks() const { return static_cast<int>(entries_.size()); }
    // Resident block ids, ascending. For equivalence tests.
    std::vector<int> resident() const;
    uint64_t use_count_of(int block) const;

  private:
    struct Entry {
        std::list<int>::iterator lru_pos;  // LRU only
        uint64_t use_count = 0;            // LFU only
        uint64_t inserted_at = 0;          // LFU tie-break: evict the older block
    };

    void evict_one();
    void insert_block(int block);
    void touch_block(int block);

    BlockPolicy policy_;
    int block_size_;
    int capacity_blocks_;
    uint64_t bytes_per_block_;
    uint64_t update_clock_ = 0;

    std::list<int> recency_;  // front = least recently used
    std::unordered_map<int, Entry> entries_;
    BlockCacheCounters counters_;
};

// Blocks covering a set of token indices, deduplicated and ascending.
std::vector<int> blocks_of_tokens(std::span<const int> token_indices, int block_size);

}  // namespace kvsim
