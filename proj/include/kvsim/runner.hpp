#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvsim/config.hpp"
#include "kvsim/engine.hpp"
#include "kvsim/head_profile.hpp"
#include "kvsim/pipeline_sim.hpp"

namespace kvsim {

// One grid cell: a (policy, sigma, topk_ratio, seed) combination, pooled over
// the configured number of sequences.
struct CellResult {
    std::string policy;
    double sigma = 0.0;
    double topk_ratio = 0.0;
    uint64_t seed = 0;
    int k = 0;
    int sequences = 0;
    int steps = 0;

    uint64_t lookups = 0;
    uint64_t hits = 0;
    uint64_t misses = 0;
    double hit_ratio = 0.0;
    uint64_t transferred_bytes = 0;
    uint64_t persistent_served_bytes = 0;
    uint64_t cache_bytes = 0;
    double mean_output_error = 0.0;
    bool has_output_error = false;

    PipelineTimeline timeline;       // summed over sequences
    std::string cache_state;         // final sequence's dump, similarity cells only
};

struct RunOutput {
    HeadProfiles profiles;
    double eta = 0.0, p = 0.0, epsilon = 0.0;
    // plans[i] belongs to topk_ratio[i]; non-similarity policies use the
    // layer-0-only plan and are not listed here.
    std::vector<PartitionPlan> plans;
    std::vector<CellResult> cells;   // canonical grid order
};

// Runs the whole grid. Cell/sequence tasks fan out over run.workers threads;
// results land in canonical order regardless of the worker count.
RunOutput run_experiment(const RunConfig& cfg);

// Resolves the output directory: config value, then the KVSIM_OUT_DIR
// environment variable, then ./runs. The run writes into a fresh
// <base>/<label> directory; an existing non-empty one gets a numeric suffix
// instead of being touched (reports are append-only).
std::string resolve_run_dir(const RunConfig& cfg);

// Writes config echo, profiles, plans, results (JSON + CSV), per-cell
// breakdowns and cache dumps, then the manifest naming them all. Returns the
// directory used.
std::string write_reports(const RunConfig& cfg, const RunOutput& out);

// Human-readable summary of a results.json document.
std::string render_results_table(const std::string& results_json_text);

}  // namespace kvsim
