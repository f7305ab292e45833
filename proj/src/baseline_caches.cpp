#include "kvsim/baseline_caches.hpp"

#include <algorithm>

namespace kvsim {

std::vector<int> blocks_of_tokens(std::span<const int> token_indices, int block_size) {
    if (block_size <= 0) throw ArgumentError("block_size must be positive");
    std::vector<int> blocks;
    blocks.reserve(token_indices.size());
    for (int t : token_indices) {
        if (t < 0) throw IndexError("negative token index");
        blocks.push_back(t / block_size);
    }
    std::sort(blocks.begin(), blocks.end());
    blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
    return blocks;
}

BlockCache::BlockCache(BlockPolicy policy, int block_size, int capacity_blocks,
                       uint64_t bytes_per_block)
    : policy_(policy),
      block_size_(block_size),
      capacity_blocks_(capacity_blocks),
      bytes_per_block_(bytes_per_block) {
    if (block_size <= 0) throw ArgumentError("block_size must be positive");
    if (capacity_blocks <= 0) throw ArgumentError("capacity must be positive");
    if (bytes_per_block == 0) throw ArgumentError("bytes_per_block must be positive");
}

BlockCache::BlockCache(const BlockCache& other)
    : policy_(other.policy_),
      block_size_(other.block_size_),
      capacity_blocks_(other.capacity_blocks_),
      bytes_per_block_(other.bytes_per_block_),
      update_clock_(other.update_clock_),
      recency_(other.recency_),
      entries_(other.entries_),
      counters_(other.counters_) {
    for (auto it = recency_.begin(); it != recency_.end(); ++it) entries_.at(*it).lru_pos = it;
}

BlockCache& BlockCache::operator=(const BlockCache& other) {
    if (this == &other) return *this;
    policy_ = other.policy_;
    block_size_ = other.block_size_;
    capacity_blocks_ = other.capacity_blocks_;
    bytes_per_block_ = other.bytes_per_block_;
    update_clock_ = other.update_clock_;
    recency_ = other.recency_;
    entries_ = other.entries_;
    counters_ = other.counters_;
    for (auto it = recency_.begin(); it != recency_.end(); ++it) entries_.at(*it).lru_pos = it;
    return *this;
}

AccessPlan BlockCache::lookup(std::span<const int> token_indices) const {
    AccessPlan plan;
    for (int b : blocks_of_tokens(token_indices, block_size_)) {
        if (entries_.count(b))
            plan.hit_blocks.push_back(b);
        else
            plan.miss_blocks.push_back(b);
    }
    return plan;
}

void BlockCache::evict_one() {
    int victim;
    if (policy_ == BlockPolicy::kLru) {
        victim = recency_.front();
        recency_.pop_front();
    } else {
        // LFU: smallest use count, ties evict the older (earlier-inserted)
        // block, remaining ties the lower block id (full determinism).
        victim = -1;
        uint64_t best_count = 0, best_age = 0;
        for (const auto& [block, e] : entries_) {
            if (victim < 0 || e.use_count < best_count ||
                (e.use_count == best_count && e.inserted_at < best_age) ||
                (e.use_count == best_count && e.inserted_at == best_age && block < victim)) {
                victim = block;
                best_count = e.use_count;
                best_age = e.inserted_at;
            }
        }
    }
    entries_.erase(victim);
    ++counters_.evictions;
}

void BlockCache::insert_block(int block) {
    Entry e;
    if (policy_ == BlockPolicy::kLru) {
        recency_.push_back(block);
        e.lru_pos = std::prev(recency_.end());
    }
    e.use_count = 1;
    e.inserted_at = update_clock_;
    entries_.emplace(block, e);
    if (static_cast<int>(entries_.size()) > capacity_blocks_) evict_one();
}

void BlockCache::touch_block(int block) {
    Entry& e = entries_.at(block);
    if (policy_ == BlockPolicy::kLru) {
        recency_.erase(e.lru_pos);
        recency_.push_back(block);
        e.lru_pos = std::prev(recency_.end());
    } else {
        ++e.use_count;
    }
}

void BlockCache::update(const AccessPlan& plan, std::span<const int> fetched_blocks) {
    if (fetched_blocks.size() != plan.miss_blocks.size() ||
        !std::equal(fetched_blocks.begin(), fetched_blocks.end(), plan.miss_blocks.begin()))
        throw ContractError("fetched blocks must cover exactly the planned misses");
    for (int b : plan.hit_blocks)
        if (!entries_.count(b)) throw ContractError("planned hit block is not resident");

    ++update_clock_;
    ++counters_.lookups;
    counters_.block_hits += plan.hit_blocks.size();
    counters_.block_misses += plan.miss_blocks.size();
    // One metadata write per accessed block, hit or miss: promotion or insertion.
    counters_.metadata_updates += plan.hit_blocks.size() + plan.miss_blocks.size();
    counters_.buffer_merge_bytes += bytes_per_block_ * plan.miss_blocks.size();

    for (int b : plan.hit_blocks) touch_block(b);
    for (int b : fetched_blocks) insert_block(b);
}

std::vector<int> BlockCache::resident() const {
    std::vector<int> out;
    out.reserve(entries_.size());
    for (const auto& [block, e] : entries_) out.push_back(block);
    std::sort(out.begin(), out.end());
    return out;
}

uint64_t BlockCache::use_count_of(int block) const {
    auto it = entries_.find(block);
    if (it == entries_.end()) throw IndexError("block not resident");
    return it->second.use_count;
}

}  // namespace kvsim
