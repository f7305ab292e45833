#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvsim/matrix.hpp"

namespace kvsim {

enum class Placement { kOffloaded, kPersistent };

// Profile of one KV head: the per-query-head importance scores of its group,
// the max-reduced KV importance, the min-reduced expected query similarity,
// the hit threshold, the reuse difficulty, and the planned placement.
struct HeadProfileEntry {
    std::vector<double> q_importance;
    double kv_importance = 0.0;
    double s_hat = 0.0;
    double tau = -1.0;
    double difficulty = 0.0;
    Placement placement = Placement::kOffloaded;
};

// profiles[layer][kv_head]
using HeadProfiles = std::vector<std::vector<HeadProfileEntry>>;

// Importance-to-threshold mapping:
//   theta* = arccos(eta),  lambda = s^p,  theta = lambda*theta* + (1-lambda)*pi,
//   tau = cos(theta).
// Monotonically increasing in s; tau(1) = eta, tau(0) = -1.
// Domain: 0 <= s <= 1, -1 < eta <= 1, p >= 1.
double compute_threshold(double s, double eta, double p);

// Reuse difficulty: how close a head's threshold sits to its expected query
// similarity. D = tau - (s_hat - epsilon); positive means the threshold is
// hard to sustain and the head is a persistence candidate. epsilon > 0.
double compute_difficulty(double tau, double s_hat, double epsilon);

struct FitResult {
    double alpha = 0.0;
    // Set when full and streaming outputs coincide and the blend weight is
    // unidentifiable; alpha is reported as 0 then.
    bool degenerate = false;
};

// One observation for the blend fit: matched attention outputs of the same
// (query, sequence) under full, sink/recent-only, and the reference target.
struct BlendSample {
    std::vector<double> full;
    std::vector<double> streaming;
    std::vector<double> target;
};

// Least-squares fit of target ~ alpha*full + (1-alpha)*streaming over the
// samples of one head, clamped to [0, 1].
FitResult fit_importance(const std::vector<BlendSample>& samples);

// Per-sequence, per-step query matrices (num_q_heads x head_dim) recorded for
// similarity profiling.
struct QueryTrace {
    int num_q_heads = 0;
    std::vector<std::vector<Matrix>> sequences;
};

// Mean cosine similarity of adjacent-step query pairs per query head,
// averaged over sequences. Every sequence must have at least two steps.
std::vector<double> profile_similarity(const QueryTrace& trace);

// Group reductions pinning how per-query-head scores become per-KV-head ones:
// importance takes the max of the group (a KV head is as important as its
// most important consumer), expected similarity takes the min (reuse is
// gated by the least predictable consumer).
double kv_importance_of_group(std::span<const double> q_importance);
double kv_s_hat_of_group(std::span<const double> q_s_hat);

struct PartitionCosts {
    double t_comp_s = 0.0;          // per-layer compute window
    double pcie_bw = 0.0;           // bytes/second
    double mem_head_bytes = 0.0;    // top-k KV bytes of one head (transfer unit)
    uint64_t persist_bytes_per_head = 0;  // full-KV bytes a persistent head pins
    uint64_t hbm_budget_bytes = 0;
};

struct LayerPartition {
    int n_d = 0;        // heads with positive difficulty
    int n_persist = 0;  // heads actually persisted
    std::vector<int> persistent_heads;
};

struct PartitionPlan {
    int n_p = 0;  // heads whose transfer hides under one compute window
    std::vector<LayerPartition> layers;
    uint64_t persistent_bytes = 0;
    // (layer, head) pairs dropped to fit the HBM budget, lowest difficulty first.
    std::vector<std::pair<int, int>> budget_dropped;
};

// Splits heads into persistent and offloaded. N_p = floor(t_comp * bw /
// mem_head) heads can be fetched within one compute window; each layer
// persists max(N_d - N_p, 0) of its positive-difficulty heads, highest
// difficulty first. Layer 0 is fully persistent regardless (its transfers can
// never be prefetched). If the result exceeds the HBM budget, lowest-
// difficulty persistent heads outside layer 0 are dropped; an infeasible
// layer-0 requirement is a ConfigError.
PartitionPlan plan_partition(const HeadProfiles& profiles, const PartitionCosts& costs);

// Applies a plan's placements back onto the profiles.
void apply_partition(HeadProfiles& profiles, const PartitionPlan& plan);

// Partition plan file round-trip (JSON).
std::string plan_to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const std::string& text);
void write_plan(const std::string& path, const PartitionPlan& plan);
PartitionPlan read_plan(const std::string& path);

// Profile file round-trip (JSON; one record per KV head with its group's
// importance scores, reductions, threshold, difficulty and placement).
std::string profiles_to_json(const HeadProfiles& profiles, double eta, double p, double epsilon);
HeadProfiles profiles_from_json(const std::string& text, double* eta = nullptr,
                                double* p = nullptr, double* epsilon = nullptr);
void write_profiles(const std::string& path, const HeadProfiles& profiles, double eta, double p,
                    double epsilon);
HeadProfiles read_profiles(const std::string& path, double* eta = nullptr, double* p = nullptr,
                           double* epsilon = nullptr);

}  // namespace kvsim
