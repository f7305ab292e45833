#pragma once

#include <string>
#include <vector>

#include "kvsim/config.hpp"
#include "kvsim/head_profile.hpp"
#include "kvsim/synthetic_model.hpp"

namespace kvsim {

struct ProfilerInputs {
    // Probe workloads. Query-similarity profiling uses all of them; the blend
    // fit uses the first blend_sequences of them.
    std::vector<const StepSource*> sources;
    int blend_sequences = 1;
    int blend_steps = 8;
    int topk = 1;  // target selection size for the blend fit
    int sink_tokens = 4;
    int recent_tokens = 64;
    double eta = 0.8;
    double p = 3.0;
    double epsilon = 0.1;
    // When non-empty ([layer][kv_head][group member]), importance is taken
    // from here and the blend fit is skipped.
    std::vector<std::vector<std::vector<double>>> provided_importance;
};

// Measures expected adjacent-step query similarity and fits per-query-head
// importance, then derives per-KV-head thresholds and difficulties. Placement
// is left all-offloaded; partition planning assigns it.
HeadProfiles profile_heads(const ProfilerInputs& in);

// Profiles with the probe workloads the config describes: synthetic probes
// from the profiling section, or the configured trace when one is set.
HeadProfiles compute_profiles(const RunConfig& cfg);

// Importance file: {"q_importance": [layer][kv_head][group member]}.
std::vector<std::vector<std::vector<double>>> read_importance(const std::string& path);

}  // namespace kvsim
