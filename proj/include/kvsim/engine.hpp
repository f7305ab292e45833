#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kvsim/baseline_caches.hpp"
#include "kvsim/head_profile.hpp"
#include "kvsim/matrix.hpp"
#include "kvsim/pipeline_sim.hpp"
#include "kvsim/retrieval.hpp"
#include "kvsim/similarity_cache.hpp"
#include "kvsim/synthetic_model.hpp"

namespace kvsim {

enum class Policy { kSimilarity, kLru, kLfu, kPrefetchOnly };

std::string policy_name(Policy p);
Policy policy_from_name(const std::string& name);

struct ModeFlags {
    bool always_miss = false;
    bool always_hit = false;
    std::optional<double> tau_override;
};

struct EngineConfig {
    ModelShape shape;
    int k = 0;  // entry size in tokens, fixed for the whole run
    int sink_tokens = 4;
    int recent_tokens = 64;
    RetrieverVariant retriever = RetrieverVariant::kExact;
    int hash_bits = 256;
    uint64_t retriever_seed = 1;
    Policy policy = Policy::kSimilarity;
    ModeFlags mode;
    CostModel cost;
    std::optional<SyncMode> sync_override;  // default: similarity GPU-centric, others CPU
    int block_size = 32;
    int block_capacity = 0;  // blocks per head; required for block policies
    int sync_events_similarity = 1;
    int sync_events_block = 1;
    int sync_events_prefetch = 2;
    bool collect_outputs = false;
    bool compute_oracle_error = true;
};

struct HeadMetrics {
    uint64_t hits = 0;
    uint64_t misses = 0;
    uint64_t transferred_bytes = 0;
    uint64_t persistent_bytes = 0;
    HeadCacheStats cache;
};

struct DecodeMetrics {
    std::vector<std::vector<HeadMetrics>> heads;  // [layer][kv_head]
    uint64_t steps = 0;
    double output_err_sum = 0.0;
    uint64_t output_err_count = 0;
    uint64_t cache_bytes_current = 0;

    uint64_t hits() const;
    uint64_t misses() const;
    uint64_t lookups() const { return hits() + misses(); }
    double hit_ratio() const;
    uint64_t transferred_bytes() const;
    uint64_t persistent_bytes() const;
    double mean_output_error() const;
};

// Host/device placement of one KV head's cache with its retrieval metadata.
struct HeadStore {
    Matrix k;
    Matrix v;
    Placement tier = Placement::kOffloaded;
    RetrievalMetadata meta;
    CacheEntry entry;                          // similarity policy
    std::vector<QueryLabel> labels;            // one per group query head
    std::unique_ptr<SinkRecentBuffer> window;  // offloaded heads only
    std::unique_ptr<BlockCache> blocks;        // block policies only
};

// Drives the per-step decode workflow over a tiered KV store:
// approximate-query lookups during the previous layer, prefetch of misses,
// true-query retrieval for persistent heads, deduplicated top-k attention,
// and per-step timeline accounting.
class DecodeEngine {
  public:
    DecodeEngine(const EngineConfig& cfg, const HeadProfiles& profiles,
                 const PartitionPlan& plan, const StepSource& source);

    // Loads the prompt, encodes retrieval metadata, selects the step-0 top-k
    // with true queries and initializes entries, labels and windows.
    void prefill();
    // Runs one decode step; callable decode_steps() times after prefill.
    void decode_step();
    // prefill() plus every decode step.
    void run();

    const DecodeMetrics& metrics() const { return metrics_; }
    const PipelineTimeline& timeline() const { return timeline_; }
    SyncMode sync_mode() const { return sync_mode_; }
    uint64_t host_bytes() const;
    uint64_t device_persistent_bytes() const;
    uint64_t modeled_cache_bytes() const;

    const HeadStore& head(int layer, int kv_head) const { return store_[layer][kv_head]; }
    // Collected only when cfg.collect_outputs: outputs[t][layer] is an
    // h_q-row matrix of attention outputs for decode step t+1.
    const std::vector<std::vector<Matrix>>& collected_outputs() const { return outputs_; }

    std::string cache_state_json() const;

  private:
    struct HeadSelection {
        std::vector<int> indices;
        bool transfer = false;
        bool persistent_serve = false;
    };

    std::vector<int> group_topk(int t, int layer, int kv_head, bool use_true_query,
                                const RetrievalMetadata& meta);
    uint64_t entry_bytes() const;

    EngineConfig cfg_;
    HeadProfiles profiles_;
    const StepSource& source_;
    std::vector<std::vector<HeadStore>> store_;
    DecodeMetrics metrics_;
    PipelineTimeline timeline_;
    SyncMode sync_mode_;
    std::vector<std::vector<Matrix>> outputs_;
    int current_step_ = 0;
    bool prefilled_ = false;
};

// Profiles with unit importance everywhere and a shared threshold; the
// stand-in when no profiling pass has run.
HeadProfiles uniform_profiles(const ModelShape& shape, double tau);

// Partition keeping layer 0 persistent and everything else offloaded; the
// stand-in plan for policies that do not consume a difficulty-based split.
PartitionPlan layer0_only_plan(const ModelShape& shape);

}  // namespace kvsim
