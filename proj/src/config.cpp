#include "kvsim/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kvsim {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& j, const char* section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string("section '") + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown key '" + it.key() + "' in section '" + section + "'");
    }
}

template <typename T>
void read_field(const ordered_json& j, const char* section, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for '") + section + "." + key + "'");
    }
}

// Swept axes accept either a scalar or an array of values.
template <typename T>
void read_axis(const ordered_json& j, const char* section, const char* key, std::vector<T>& out) {
    if (!j.contains(key)) return;
    const ordered_json& v = j.at(key);
    try {
        if (v.is_array()) {
            v.get_to(out);
        } else {
            out.assign(1, v.get<T>());
        }
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for '") + section + "." + key + "'");
    }
}

}  // namespace

RetrieverVariant RunConfig::retriever_variant() const {
    if (retriever.variant == "exact") return RetrieverVariant::kExact;
    if (retriever.variant == "signhash") return RetrieverVariant::kSignHash;
    throw ConfigError("unknown retriever variant: " + retriever.variant);
}

std::optional<SyncMode> RunConfig::sync_override() const {
    if (sync.mode == "auto") return std::nullopt;
    if (sync.mode == "cpu_centric") return SyncMode::kCpuCentric;
    if (sync.mode == "gpu_centric") return SyncMode::kGpuCentric;
    throw ConfigError("unknown sync mode: " + sync.mode);
}

int RunConfig::k_of_ratio(double ratio) const {
    int k = static_cast<int>(std::ceil(ratio * workload.n_prompt));
    return std::max(k, 1);
}

void RunConfig::validate() const {
    model.validate();
    if (workload.d_model < 1) throw ConfigError("workload.d_model must be positive");
    if (workload.n_prompt < 1) throw ConfigError("workload.n_prompt must be positive");
    if (workload.steps < 0) throw ConfigError("workload.steps must be non-negative");
    if (workload.sequences < 1) throw ConfigError("workload.sequences must be positive");
    if (workload.sigma.empty()) throw ConfigError("workload.sigma must not be empty");
    for (double s : workload.sigma)
        if (!(s >= 0.0)) throw ConfigError("workload.sigma values must be non-negative");
    if (!(workload.sigma_layer >= 0.0))
        throw ConfigError("workload.sigma_layer must be non-negative");
    if (!(workload.hot_fraction >= 0.0 && workload.hot_fraction <= 1.0))
        throw ConfigError("workload.hot_fraction must lie in [0, 1]");
    if (workload.hot_run_length < 1) throw ConfigError("workload.hot_run_length must be positive");
    if (!(workload.hot_boost >= 1.0)) throw ConfigError("workload.hot_boost must be at least 1");
    if (workload.seeds.empty()) throw ConfigError("workload.seeds must not be empty");

    if (attention.sink_tokens < 0 || attention.recent_tokens < 0)
        throw ConfigError("window sizes must be non-negative");
    if (attention.topk_ratio.empty()) throw ConfigError("attention.topk_ratio must not be empty");
    for (double r : attention.topk_ratio)
        if (!(r > 0.0 && r <= 1.0)) throw ConfigError("topk_ratio values must lie in (0, 1]");

    retriever_variant();
    if (retriever.hash_bits < 8 || retriever.hash_bits % 8 != 0)
        throw ConfigError("retriever.hash_bits must be a positive multiple of 8");

    if (!(thresholds.eta > -1.0 && thresholds.eta <= 1.0))
        throw ConfigError("thresholds.eta must lie in (-1, 1]");
    if (!(thresholds.p >= 1.0)) throw ConfigError("thresholds.p must be at least 1");
    if (!(thresholds.epsilon > 0.0)) throw ConfigError("thresholds.epsilon must be positive");

    if (policies.empty()) throw ConfigError("policies must not be empty");
    std::set<std::string> seen;
    for (const std::string& p : policies) {
        policy_from_name(p);
        if (!seen.insert(p).second) throw ConfigError("duplicate policy: " + p);
    }

    if (block_cache.block_size < 1) throw ConfigError("block_cache.block_size must be positive");
    if (!(block_cache.capacity_topk_multiple > 0.0))
        throw ConfigError("block_cache.capacity_topk_multiple must be positive");

    if (!(cost_model.pcie_peak_bw > 0.0)) throw ConfigError("cost_model.pcie_peak_bw must be positive");
    if (!(cost_model.gather_efficiency > 0.0 && cost_model.gather_efficiency <= 1.0))
        throw ConfigError("cost_model.gather_efficiency must lie in (0, 1]");
    if (cost_model.sync_bubble_cpu_centric_s < 0.0 || cost_model.sync_bubble_gpu_centric_s < 0.0)
        throw ConfigError("sync bubbles must be non-negative");
    if (cost_model.t_comp_s < 0.0) throw ConfigError("cost_model.t_comp_s must be non-negative");
    if (cost_model.c_lookup_per_block_s < 0.0 || cost_model.c_list_update_per_block_s < 0.0 ||
        cost_model.c_merge_per_byte_s < 0.0 || cost_model.c_label_update_per_head_s < 0.0 ||
        cost_model.c_retrieval_per_head_s < 0.0)
        throw ConfigError("management cost constants must be non-negative");

    sync_override();
    if (sync.events_similarity < 0 || sync.events_block < 0 || sync.events_prefetch < 0)
        throw ConfigError("sync event counts must be non-negative");

    if (profiling.sequences < 1) throw ConfigError("profiling.sequences must be positive");
    if (profiling.steps < 2) throw ConfigError("profiling.steps must be at least 2");
    if (profiling.blend_sequences < 1)
        throw ConfigError("profiling.blend_sequences must be positive");
    if (profiling.blend_steps < 1) throw ConfigError("profiling.blend_steps must be positive");
    if (profiling.n_prompt < 1) throw ConfigError("profiling.n_prompt must be positive");
    if (!(profiling.sigma >= 0.0)) throw ConfigError("profiling.sigma must be non-negative");
    if (!(profiling.sigma_layer >= 0.0))
        throw ConfigError("profiling.sigma_layer must be non-negative");

    if (run.workers < 1) throw ConfigError("run.workers must be positive");

    if (mode.always_miss && mode.always_hit)
        throw ConfigError("mode.always_miss and mode.always_hit are mutually exclusive");
    if (mode.tau_override && !(*mode.tau_override >= -1.0 && *mode.tau_override <= 1.0))
        throw ConfigError("mode.tau_override must lie in [-1, 1]");
}

std::string config_to_json(const RunConfig& cfg) {
    ordered_json j;
    ordered_json model;
    model["num_layers"] = cfg.model.num_layers;
    model["num_q_heads"] = cfg.model.num_q_heads;
    model["num_kv_heads"] = cfg.model.num_kv_heads;
    model["head_dim"] = cfg.model.head_dim;
    model["bytes_per_element"] = cfg.model.bytes_per_element;
    j["model"] = model;

    ordered_json w;
    w["d_model"] = cfg.workload.d_model;
    w["n_prompt"] = cfg.workload.n_prompt;
    w["steps"] = cfg.workload.steps;
    w["sequences"] = cfg.workload.sequences;
    w["sigma"] = cfg.workload.sigma;
    w["sigma_layer"] = cfg.workload.sigma_layer;
    w["hot_fraction"] = cfg.workload.hot_fraction;
    w["hot_run_length"] = cfg.workload.hot_run_length;
    w["hot_boost"] = cfg.workload.hot_boost;
    w["seeds"] = cfg.workload.seeds;
    w["trace_path"] = cfg.workload.trace_path;
    j["workload"] = w;

    ordered_json a;
    a["sink_tokens"] = cfg.attention.sink_tokens;
    a["recent_tokens"] = cfg.attention.recent_tokens;
    a["topk_ratio"] = cfg.attention.topk_ratio;
    j["attention"] = a;

    ordered_json r;
    r["variant"] = cfg.retriever.variant;
    r["hash_bits"] = cfg.retriever.hash_bits;
    j["retriever"] = r;

    ordered_json t;
    t["eta"] = cfg.thresholds.eta;
    t["p"] = cfg.thresholds.p;
    t["epsilon"] = cfg.thresholds.epsilon;
    j["thresholds"] = t;

    j["policies"] = cfg.policies;

    ordered_json b;
    b["block_size"] = cfg.block_cache.block_size;
    b["capacity_topk_multiple"] = cfg.block_cache.capacity_topk_multiple;
    j["block_cache"] = b;

    ordered_json c;
    c["pcie_peak_bw"] = cfg.cost_model.pcie_peak_bw;
    c["gather_efficiency"] = cfg.cost_model.gather_efficiency;
    c["sync_bubble_cpu_centric_s"] = cfg.cost_model.sync_bubble_cpu_centric_s;
    c["sync_bubble_gpu_centric_s"] = cfg.cost_model.sync_bubble_gpu_centric_s;
    c["t_comp_s"] = cfg.cost_model.t_comp_s;
    c["c_lookup_per_block_s"] = cfg.cost_model.c_lookup_per_block_s;
    c["c_list_update_per_block_s"] = cfg.cost_model.c_list_update_per_block_s;
    c["c_merge_per_byte_s"] = cfg.cost_model.c_merge_per_byte_s;
    c["c_label_update_per_head_s"] = cfg.cost_model.c_label_update_per_head_s;
    c["c_retrieval_per_head_s"] = cfg.cost_model.c_retrieval_per_head_s;
    c["calibration_target_block_mgmt_us"] = cfg.cost_model.calibration_target_block_mgmt_us;
    c["calibration_target_hybrid_mgmt_us"] = cfg.cost_model.calibration_target_hybrid_mgmt_us;
    j["cost_model"] = c;

    ordered_json s;
    s["mode"] = cfg.sync.mode;
    s["events_similarity"] = cfg.sync.events_similarity;
    s["events_block"] = cfg.sync.events_block;
    s["events_prefetch"] = cfg.sync.events_prefetch;
    j["sync"] = s;

    ordered_json pl;
    pl["hbm_budget_bytes"] = cfg.placement.hbm_budget_bytes;
    pl["profile_path"] = cfg.placement.profile_path;
    pl["plan_path"] = cfg.placement.plan_path;
    j["placement"] = pl;

    ordered_json pr;
    pr["sequences"] = cfg.profiling.sequences;
    pr["steps"] = cfg.profiling.steps;
    pr["blend_sequences"] = cfg.profiling.blend_sequences;
    pr["blend_steps"] = cfg.profiling.blend_steps;
    pr["n_prompt"] = cfg.profiling.n_prompt;
    pr["sigma"] = cfg.profiling.sigma;
    pr["sigma_layer"] = cfg.profiling.sigma_layer;
    pr["seed"] = cfg.profiling.seed;
    pr["importance_path"] = cfg.profiling.importance_path;
    j["profiling"] = pr;

    ordered_json rn;
    rn["workers"] = cfg.run.workers;
    rn["out_dir"] = cfg.run.out_dir;
    rn["label"] = cfg.run.label;
    rn["compute_oracle_error"] = cfg.run.compute_oracle_error;
    rn["dump_cache_state"] = cfg.run.dump_cache_state;
    rn["write_breakdowns"] = cfg.run.write_breakdowns;
    j["run"] = rn;

    ordered_json m;
    m["always_miss"] = cfg.mode.always_miss;
    m["always_hit"] = cfg.mode.always_hit;
    if (cfg.mode.tau_override)
        m["tau_override"] = *cfg.mode.tau_override;
    else
        m["tau_override"] = nullptr;
    j["mode"] = m;

    return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "config",
               {"model", "workload", "attention", "retriever", "thresholds", "policies",
                "block_cache", "cost_model", "sync", "placement", "profiling", "run", "mode"});

    RunConfig cfg;
    if (j.contains("model")) {
        const ordered_json& s = j.at("model");
        check_keys(s, "model",
                   {"num_layers", "num_q_heads", "num_kv_heads", "head_dim", "bytes_per_element"});
        read_field(s, "model", "num_layers", cfg.model.num_layers);
        read_field(s, "model", "num_q_heads", cfg.model.num_q_heads);
        read_field(s, "model", "num_kv_heads", cfg.model.num_kv_heads);
        read_field(s, "model", "head_dim", cfg.model.head_dim);
        read_field(s, "model", "bytes_per_element", cfg.model.bytes_per_element);
    }
    if (j.contains("workload")) {
        const ordered_json& s = j.at("workload");
        check_keys(s, "workload",
                   {"d_model", "n_prompt", "steps", "sequences", "sigma", "sigma_layer",
                    "hot_fraction", "hot_run_length", "hot_boost", "seeds", "trace_path"});
        read_field(s, "workload", "d_model", cfg.workload.d_model);
        read_field(s, "workload", "n_prompt", cfg.workload.n_prompt);
        read_field(s, "workload", "steps", cfg.workload.steps);
        read_field(s, "workload", "sequences", cfg.workload.sequences);
        read_axis(s, "workload", "sigma", cfg.workload.sigma);
        read_field(s, "workload", "sigma_layer", cfg.workload.sigma_layer);
        read_field(s, "workload", "hot_fraction", cfg.workload.hot_fraction);
        read_field(s, "workload", "hot_run_length", cfg.workload.hot_run_length);
        read_field(s, "workload", "hot_boost", cfg.workload.hot_boost);
        read_axis(s, "workload", "seeds", cfg.workload.seeds);
        read_field(s, "workload", "trace_path", cfg.workload.trace_path);
    }
    if (j.contains("attention")) {
        const ordered_json& s = j.at("attention");
        check_keys(s, "attention", {"sink_tokens", "recent_tokens", "topk_ratio"});
        read_field(s, "attention", "sink_tokens", cfg.attention.sink_tokens);
        read_field(s, "attention", "recent_tokens", cfg.attention.recent_tokens);
        read_axis(s, "attention", "topk_ratio", cfg.attention.topk_ratio);
    }
    if (j.contains("retriever")) {
        const ordered_json& s = j.at("retriever");
        check_keys(s, "retriever", {"variant", "hash_bits"});
        read_field(s, "retriever", "variant", cfg.retriever.variant);
        read_field(s, "retriever", "hash_bits", cfg.retriever.hash_bits);
    }
    if (j.contains("thresholds")) {
        const ordered_json& s = j.at("thresholds");
        check_keys(s, "thresholds", {"eta", "p", "epsilon"});
        read_field(s, "thresholds", "eta", cfg.thresholds.eta);
        read_field(s, "thresholds", "p", cfg.thresholds.p);
        read_field(s, "thresholds", "epsilon", cfg.thresholds.epsilon);
    }
    if (j.contains("policies")) {
        try {
            if (j.at("policies").is_array())
                j.at("policies").get_to(cfg.policies);
            else
                cfg.policies.assign(1, j.at("policies").get<std::string>());
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("bad value for 'policies'");
        }
    }
    if (j.contains("block_cache")) {
        const ordered_json& s = j.at("block_cache");
        check_keys(s, "block_cache", {"block_size", "capacity_topk_multiple"});
        read_field(s, "block_cache", "block_size", cfg.block_cache.block_size);
        read_field(s, "block_cache", "capacity_topk_multiple",
                   cfg.block_cache.capacity_topk_multiple);
    }
    if (j.contains("cost_model")) {
        const ordered_json& s = j.at("cost_model");
        check_keys(s, "cost_model",
                   {"pcie_peak_bw", "gather_efficiency", "sync_bubble_cpu_centric_s",
                    "sync_bubble_gpu_centric_s", "t_comp_s", "c_lookup_per_block_s",
                    "c_list_update_per_block_s", "c_merge_per_byte_s",
                    "c_label_update_per_head_s", "c_retrieval_per_head_s",
                    "calibration_target_block_mgmt_us", "calibration_target_hybrid_mgmt_us"});
        read_field(s, "cost_model", "pcie_peak_bw", cfg.cost_model.pcie_peak_bw);
        read_field(s, "cost_model", "gather_efficiency", cfg.cost_model.gather_efficiency);
        read_field(s, "cost_model", "sync_bubble_cpu_centric_s",
                   cfg.cost_model.sync_bubble_cpu_centric_s);
        read_field(s, "cost_model", "sync_bubble_gpu_centric_s",
                   cfg.cost_model.sync_bubble_gpu_centric_s);
        read_field(s, "cost_model", "t_comp_s", cfg.cost_model.t_comp_s);
        read_field(s, "cost_model", "c_lookup_per_block_s", cfg.cost_model.c_lookup_per_block_s);
        read_field(s, "cost_model", "c_list_update_per_block_s",
                   cfg.cost_model.c_list_update_per_block_s);
        read_field(s, "cost_model", "c_merge_per_byte_s", cfg.cost_model.c_merge_per_byte_s);
        read_field(s, "cost_model", "c_label_update_per_head_s",
                   cfg.cost_model.c_label_update_per_head_s);
        read_field(s, "cost_model", "c_retrieval_per_head_s",
                   cfg.cost_model.c_retrieval_per_head_s);
        read_field(s, "cost_model", "calibration_target_block_mgmt_us",
                   cfg.cost_model.calibration_target_block_mgmt_us);
        read_field(s, "cost_model", "calibration_target_hybrid_mgmt_us",
                   cfg.cost_model.calibration_target_hybrid_mgmt_us);
    }
    if (j.contains("sync")) {
        const ordered_json& s = j.at("sync");
        check_keys(s, "sync", {"mode", "events_similarity", "events_block", "events_prefetch"});
        read_field(s, "sync", "mode", cfg.sync.mode);
        read_field(s, "sync", "events_similarity", cfg.sync.events_similarity);
        read_field(s, "sync", "events_block", cfg.sync.events_block);
        read_field(s, "sync", "events_prefetch", cfg.sync.events_prefetch);
    }
    if (j.contains("placement")) {
        const ordered_json& s = j.at("placement");
        check_keys(s, "placement", {"hbm_budget_bytes", "profile_path", "plan_path"});
        read_field(s, "placement", "hbm_budget_bytes", cfg.placement.hbm_budget_bytes);
        read_field(s, "placement", "profile_path", cfg.placement.profile_path);
        read_field(s, "placement", "plan_path", cfg.placement.plan_path);
    }
    if (j.contains("profiling")) {
        const ordered_json& s = j.at("profiling");
        check_keys(s, "profiling",
                   {"sequences", "steps", "blend_sequences", "blend_steps", "n_prompt", "sigma",
                    "sigma_layer", "seed", "importance_path"});
        read_field(s, "profiling", "sequences", cfg.profiling.sequences);
        read_field(s, "profiling", "steps", cfg.profiling.steps);
        read_field(s, "profiling", "blend_sequences", cfg.profiling.blend_sequences);
        read_field(s, "profiling", "blend_steps", cfg.profiling.blend_steps);
        read_field(s, "profiling", "n_prompt", cfg.profiling.n_prompt);
        read_field(s, "profiling", "sigma", cfg.profiling.sigma);
        read_field(s, "profiling", "sigma_layer", cfg.profiling.sigma_layer);
        read_field(s, "profiling", "seed", cfg.profiling.seed);
        read_field(s, "profiling", "importance_path", cfg.profiling.importance_path);
    }
    if (j.contains("run")) {
        const ordered_json& s = j.at("run");
        check_keys(s, "run",
                   {"workers", "out_dir", "label", "compute_oracle_error", "dump_cache_state",
                    "write_breakdowns"});
        read_field(s, "run", "workers", cfg.run.workers);
        read_field(s, "run", "out_dir", cfg.run.out_dir);
        read_field(s, "run", "label", cfg.run.label);
        read_field(s, "run", "compute_oracle_error", cfg.run.compute_oracle_error);
        read_field(s, "run", "dump_cache_state", cfg.run.dump_cache_state);
        read_field(s, "run", "write_breakdowns", cfg.run.write_breakdowns);
    }
    if (j.contains("mode")) {
        const ordered_json& s = j.at("mode");
        check_keys(s, "mode", {"always_miss", "always_hit", "tau_override"});
        read_field(s, "mode", "always_miss", cfg.mode.always_miss);
        read_field(s, "mode", "always_hit", cfg.mode.always_hit);
        if (s.contains("tau_override") && !s.at("tau_override").is_null()) {
            double v;
            read_field(s, "mode", "tau_override", v);
            cfg.mode.tau_override = v;
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

std::string config_hash(const RunConfig& cfg) {
    std::string text = config_to_json(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace kvsim
