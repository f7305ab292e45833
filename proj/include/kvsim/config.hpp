#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvsim/engine.hpp"
#include "kvsim/matrix.hpp"
#include "kvsim/pipeline_sim.hpp"

namespace kvsim {

// One JSON document drives everything; each struct below mirrors one section.
// Unknown keys are rejected so typos fail loudly instead of running defaults.

struct WorkloadConfig {
    int d_model = 256;
    int n_prompt = 4096;
    int steps = 160;
    int sequences = 2;
    std::vector<double> sigma{0.02};  // swept axis: per-token hidden drift
    double sigma_layer = 0.01;
    double hot_fraction = 0.125;
    int hot_run_length = 64;
    double hot_boost = 1.8;
    std::vector<uint64_t> seeds{1};   // swept axis
    std::string trace_path;           // replay this trace instead of synthesizing
};

struct AttentionConfig {
    int sink_tokens = 4;
    int recent_tokens = 64;
    std::vector<double> topk_ratio{0.10};  // swept axis
};

struct RetrieverConfig {
    std::string variant = "exact";  // "exact" | "signhash"
    int hash_bits = 256;
};

struct ThresholdConfig {
    double eta = 0.8;
    double p = 3.0;
    double epsilon = 0.1;
};

struct BlockCacheConfig {
    int block_size = 32;
    // Device capacity per head, as a multiple of the top-k working set.
    double capacity_topk_multiple = 3.0;
};

struct SyncConfig {
    std::string mode = "auto";  // "auto" | "cpu_centric" | "gpu_centric"
    int events_similarity = 1;
    int events_block = 1;
    int events_prefetch = 2;
};

struct PlacementConfig {
    uint64_t hbm_budget_bytes = 0;  // 0 = unlimited
    std::string profile_path;       // load profiles instead of computing them
    std::string plan_path;          // load the partition plan instead of planning
};

struct ProfilingConfig {
    int sequences = 8;
    int steps = 32;
    int blend_sequences = 4;
    int blend_steps = 8;
    int n_prompt = 512;
    double sigma = 0.02;
    double sigma_layer = 0.01;
    uint64_t seed = 7777;
    std::string importance_path;  // use provided importance instead of fitting
};

struct RunSection {
    int workers = 1;
    std::string out_dir;  // empty: KVSIM_OUT_DIR env var, then ./runs
    std::string label = "run";
    bool compute_oracle_error = false;
    bool dump_cache_state = true;
    bool write_breakdowns = true;
};

struct ModeConfig {
    bool always_miss = false;
    bool always_hit = false;
    std::optional<double> tau_override;
};

struct RunConfig {
    ModelShape model{4, 8, 2, 64, 2};
    WorkloadConfig workload;
    AttentionConfig attention;
    RetrieverConfig retriever;
    ThresholdConfig thresholds;
    std::vector<std::string> policies{"similarity", "lru", "lfu", "prefetch_only"};
    BlockCacheConfig block_cache;
    CostModel cost_model;
    SyncConfig sync;
    PlacementConfig placement;
    ProfilingConfig profiling;
    RunSection run;
    ModeConfig mode;

    void validate() const;  // ConfigError on any out-of-domain field
    RetrieverVariant retriever_variant() const;
    std::optional<SyncMode> sync_override() const;  // nullopt = per-policy default
    int k_of_ratio(double ratio) const;             // ceil(ratio * n_prompt)
};

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::string& path);

// FNV-1a over the canonical serialization, as a fixed-width hex string.
// Identifies a run in its manifest; any config change changes the hash.
std::string config_hash(const RunConfig& cfg);

}  // namespace kvsim
