#include "kvsim/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kvsim/config.hpp"
#include "kvsim/head_profile.hpp"
#include "kvsim/profiler.hpp"
#include "kvsim/runner.hpp"
#include "kvsim/version.hpp"

namespace kvsim {

namespace fs = std::filesystem;

namespace {

// Base output directory for single-file commands: config value, then the
// KVSIM_OUT_DIR environment variable, then the working directory.
fs::path out_base(const RunConfig& cfg) {
    if (!cfg.run.out_dir.empty()) return cfg.run.out_dir;
    const char* env = std::getenv("KVSIM_OUT_DIR");
    if (env && *env) return env;
    return ".";
}

fs::path prepare_out_path(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create output directory: " + path.parent_path().string());
    }
    return path;
}

struct FlagState {
    std::string config_path;
    std::vector<std::string> policies;
    std::vector<double> sigma;
    std::vector<double> topk_ratio;
    std::vector<uint64_t> seeds;
    int steps = 0, n_prompt = 0, sequences = 0, d_model = 0, workers = 0;
    double sigma_layer = 0.0;
    std::string out_dir, label, retriever, sync_mode, trace_path;
    std::string profile_path, plan_path, importance_path;
    int hash_bits = 0, sink = 0, recent = 0, block_size = 0;
    double eta = 0.0, p_exp = 0.0, epsilon = 0.0, tau = 0.0, capacity_multiple = 0.0;
    double t_comp = 0.0, bw = 0.0;
    uint64_t hbm_budget = 0;
    int prof_sequences = 0, prof_steps = 0, prof_n_prompt = 0;
    double prof_sigma = 0.0;
    uint64_t prof_seed = 0;
    bool always_miss = false, always_hit = false, oracle_error = false;
    bool no_breakdowns = false, no_cache_dump = false;
};

// Every flag is an override over the config file; only flags the user
// actually passed are applied.
void add_common_flags(CLI::App* cmd, FlagState& st) {
    cmd->add_option("-c,--config", st.config_path, "JSON config file");
    cmd->add_option("--out", st.out_dir, "output directory (overrides run.out_dir)");
    cmd->add_option("--eta", st.eta, "threshold ceiling eta");
    cmd->add_option("--p-exp", st.p_exp, "threshold exponent p");
    cmd->add_option("--epsilon", st.epsilon, "difficulty slack epsilon");
    cmd->add_option("--topk-ratio", st.topk_ratio, "top-k ratio values");
    cmd->add_option("--sink", st.sink, "sink token count");
    cmd->add_option("--recent", st.recent, "recent window length");
    cmd->add_option("--trace", st.trace_path, "replay this trace file");
    cmd->add_option("--n-prompt", st.n_prompt, "prompt length");
    cmd->add_option("--steps", st.steps, "decode steps");
}

void apply_common_flags(const CLI::App* cmd, const FlagState& st, RunConfig& cfg) {
    if (cmd->count("--out")) cfg.run.out_dir = st.out_dir;
    if (cmd->count("--eta")) cfg.thresholds.eta = st.eta;
    if (cmd->count("--p-exp")) cfg.thresholds.p = st.p_exp;
    if (cmd->count("--epsilon")) cfg.thresholds.epsilon = st.epsilon;
    if (cmd->count("--topk-ratio")) cfg.attention.topk_ratio = st.topk_ratio;
    if (cmd->count("--sink")) cfg.attention.sink_tokens = st.sink;
    if (cmd->count("--recent")) cfg.attention.recent_tokens = st.recent;
    if (cmd->count("--trace")) cfg.workload.trace_path = st.trace_path;
    if (cmd->count("--n-prompt")) cfg.workload.n_prompt = st.n_prompt;
    if (cmd->count("--steps")) cfg.workload.steps = st.steps;
}

RunConfig load_base_config(const FlagState& st) {
    if (!st.config_path.empty()) return load_config(st.config_path);
    return RunConfig{};
}

int cmd_profile(const CLI::App* cmd, const FlagState& st, const std::string& out_file) {
    RunConfig cfg = load_base_config(st);
    apply_common_flags(cmd, st, cfg);
    if (cmd->count("--importance")) cfg.profiling.importance_path = st.importance_path;
    if (cmd->count("--sequences")) cfg.profiling.sequences = st.prof_sequences;
    if (cmd->count("--profile-steps")) cfg.profiling.steps = st.prof_steps;
    if (cmd->count("--profile-n-prompt")) cfg.profiling.n_prompt = st.prof_n_prompt;
    if (cmd->count("--sigma")) cfg.profiling.sigma = st.prof_sigma;
    if (cmd->count("--seed")) cfg.profiling.seed = st.prof_seed;
    cfg.validate();

    HeadProfiles profiles = compute_profiles(cfg);
    fs::path path = out_file.empty() ? out_base(cfg) / "profiles.json" : fs::path(out_file);
    write_profiles(prepare_out_path(path).string(), profiles, cfg.thresholds.eta,
                   cfg.thresholds.p, cfg.thresholds.epsilon);

    std::printf("%-6s %-8s %12s %12s %12s %12s\n", "layer", "kv_head", "importance", "s_hat",
                "tau", "difficulty");
    for (size_t l = 0; l < profiles.size(); ++l)
        for (size_t g = 0; g < profiles[l].size(); ++g) {
            const HeadProfileEntry& e = profiles[l][g];
            std::printf("%-6zu %-8zu %12.6f %12.6f %12.6f %12.6f\n", l, g, e.kv_importance,
                        e.s_hat, e.tau, e.difficulty);
        }
    std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

int cmd_plan(const CLI::App* cmd, const FlagState& st, const std::string& out_file) {
    RunConfig cfg = load_base_config(st);
    apply_common_flags(cmd, st, cfg);
    if (cmd->count("--profiles")) cfg.placement.profile_path = st.profile_path;
    if (cmd->count("--hbm-budget")) cfg.placement.hbm_budget_bytes = st.hbm_budget;
    if (cmd->count("--t-comp")) cfg.cost_model.t_comp_s = st.t_comp;
    if (cmd->count("--bw")) cfg.cost_model.pcie_peak_bw = st.bw;
    cfg.validate();

    double eta = cfg.thresholds.eta, p = cfg.thresholds.p, epsilon = cfg.thresholds.epsilon;
    HeadProfiles profiles = cfg.placement.profile_path.empty()
                                ? compute_profiles(cfg)
                                : read_profiles(cfg.placement.profile_path, &eta, &p, &epsilon);

    int k = cfg.k_of_ratio(cfg.attention.topk_ratio.front());
    PartitionCosts costs;
    costs.t_comp_s = cfg.cost_model.t_comp_s;
    costs.pcie_bw = cfg.cost_model.pcie_peak_bw;
    costs.mem_head_bytes = 2.0 * k * cfg.model.head_dim * cfg.model.bytes_per_element;
    costs.persist_bytes_per_head = 2ULL *
                                   static_cast<uint64_t>(cfg.workload.n_prompt +
                                                         cfg.workload.steps) *
                                   cfg.model.head_dim * cfg.model.bytes_per_element;
    costs.hbm_budget_bytes = cfg.placement.hbm_budget_bytes;
    PartitionPlan plan = plan_partition(profiles, costs);

    fs::path path = out_file.empty() ? out_base(cfg) / "plan.json" : fs::path(out_file);
    write_plan(prepare_out_path(path).string(), plan);

    std::printf("N_p (heads hideable per compute window): %d\n", plan.n_p);
    std::printf("%-6s %6s %10s %18s\n", "layer", "N_d", "N_persist", "persistent_heads");
    for (size_t l = 0; l < plan.layers.size(); ++l) {
        std::string heads;
        for (int h : plan.layers[l].persistent_heads) {
            if (!heads.empty()) heads += ",";
            heads += std::to_string(h);
        }
        std::printf("%-6zu %6d %10d %18s\n", l, plan.layers[l].n_d, plan.layers[l].n_persist,
                    heads.empty() ? "-" : heads.c_str());
    }
    std::printf("persistent bytes: %llu\n",
                static_cast<unsigned long long>(plan.persistent_bytes));
    if (!plan.budget_dropped.empty())
        std::printf("dropped for budget: %zu heads\n", plan.budget_dropped.size());
    std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

int cmd_run(const CLI::App* cmd, const FlagState& st) {
    RunConfig cfg = load_base_config(st);
    apply_common_flags(cmd, st, cfg);
    if (cmd->count("--policy")) cfg.policies = st.policies;
    if (cmd->count("--sigma")) cfg.workload.sigma = st.sigma;
    if (cmd->count("--sigma-layer")) cfg.workload.sigma_layer = st.sigma_layer;
    if (cmd->count("--seed")) cfg.workload.seeds = st.seeds;
    if (cmd->count("--sequences")) cfg.workload.sequences = st.sequences;
    if (cmd->count("--d-model")) cfg.workload.d_model = st.d_model;
    if (cmd->count("--workers")) cfg.run.workers = st.workers;
    if (cmd->count("--label")) cfg.run.label = st.label;
    if (cmd->count("--retriever")) cfg.retriever.variant = st.retriever;
    if (cmd->count("--hash-bits")) cfg.retriever.hash_bits = st.hash_bits;
    if (cmd->count("--sync-mode")) cfg.sync.mode = st.sync_mode;
    if (cmd->count("--profile-path")) cfg.placement.profile_path = st.profile_path;
    if (cmd->count("--plan-path")) cfg.placement.plan_path = st.plan_path;
    if (cmd->count("--hbm-budget")) cfg.placement.hbm_budget_bytes = st.hbm_budget;
    if (cmd->count("--block-size")) cfg.block_cache.block_size = st.block_size;
    if (cmd->count("--capacity-multiple"))
        cfg.block_cache.capacity_topk_multiple = st.capacity_multiple;
    if (cmd->count("--tau")) cfg.mode.tau_override = st.tau;
    if (st.always_miss) cfg.mode.always_miss = true;
    if (st.always_hit) cfg.mode.always_hit = true;
    if (st.oracle_error) cfg.run.compute_oracle_error = true;
    if (st.no_breakdowns) cfg.run.write_breakdowns = false;
    if (st.no_cache_dump) cfg.run.dump_cache_state = false;
    cfg.validate();

    RunOutput out = run_experiment(cfg);
    std::string dir = write_reports(cfg, out);

    std::ifstream results(fs::path(dir) / "results.json", std::ios::binary);
    std::ostringstream buf;
    buf << results.rdbuf();
    std::fputs(render_results_table(buf.str()).c_str(), stdout);
    std::printf("reports written to %s\n", dir.c_str());
    return 0;
}

int cmd_report(const std::string& target) {
    fs::path path(target);
    if (fs::is_directory(path)) path /= "results.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open results file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::fputs(render_results_table(buf.str()).c_str(), stdout);
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"kvsim: deterministic laboratory for tiered KV-cache decode policies"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    FlagState st;
    std::string profile_out, plan_out, report_target;

    CLI::App* profile = app.add_subcommand("profile", "profile head importance and similarity");
    add_common_flags(profile, st);
    profile->add_option("-o,--out-file", profile_out, "profile output file");
    profile->add_option("--importance", st.importance_path,
                        "take importance from this file instead of fitting");
    profile->add_option("--sequences", st.prof_sequences, "probe sequences");
    profile->add_option("--profile-steps", st.prof_steps, "probe decode steps");
    profile->add_option("--profile-n-prompt", st.prof_n_prompt, "probe prompt length");
    profile->add_option("--sigma", st.prof_sigma, "probe drift");
    profile->add_option("--seed", st.prof_seed, "profiling seed");

    CLI::App* plan = app.add_subcommand("plan", "partition heads into persistent and offloaded");
    add_common_flags(plan, st);
    plan->add_option("-o,--out-file", plan_out, "plan output file");
    plan->add_option("--profiles", st.profile_path, "profile file to plan from");
    plan->add_option("--hbm-budget", st.hbm_budget, "persistent byte budget (0 = unlimited)");
    plan->add_option("--t-comp", st.t_comp, "per-layer compute window seconds");
    plan->add_option("--bw", st.bw, "PCIe bandwidth bytes/s");

    CLI::App* run = app.add_subcommand("run", "run the experiment grid and write reports");
    add_common_flags(run, st);
    run->add_option("--policy", st.policies, "cache policies to run");
    run->add_option("--sigma", st.sigma, "workload drift values");
    run->add_option("--sigma-layer", st.sigma_layer, "inter-layer drift");
    run->add_option("--seed", st.seeds, "workload seeds");
    run->add_option("--sequences", st.sequences, "sequences per cell");
    run->add_option("--d-model", st.d_model, "hidden state width");
    run->add_option("--workers", st.workers, "worker threads");
    run->add_option("--label", st.label, "run directory label");
    run->add_option("--retriever", st.retriever, "exact or signhash");
    run->add_option("--hash-bits", st.hash_bits, "sign-hash bits");
    run->add_option("--sync-mode", st.sync_mode, "auto, cpu_centric or gpu_centric");
    run->add_option("--profile-path", st.profile_path, "load profiles from this file");
    run->add_option("--plan-path", st.plan_path, "load the partition plan from this file");
    run->add_option("--hbm-budget", st.hbm_budget, "persistent byte budget (0 = unlimited)");
    run->add_option("--block-size", st.block_size, "block cache block size");
    run->add_option("--capacity-multiple", st.capacity_multiple,
                    "block capacity as a multiple of k");
    run->add_option("--tau", st.tau, "override every head's hit threshold");
    run->add_flag("--always-miss", st.always_miss, "force every lookup to miss");
    run->add_flag("--always-hit", st.always_hit, "force every lookup to hit");
    run->add_flag("--oracle-error", st.oracle_error, "track output error against the exact top-k");
    run->add_flag("--no-breakdowns", st.no_breakdowns, "skip per-cell breakdown files");
    run->add_flag("--no-cache-dump", st.no_cache_dump, "skip cache state dumps");

    CLI::App* report = app.add_subcommand("report", "render results as a table");
    report->add_option("target", report_target, "run directory or results.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (profile->parsed()) return cmd_profile(profile, st, profile_out);
        if (plan->parsed()) return cmd_plan(plan, st, plan_out);
        if (run->parsed()) return cmd_run(run, st);
        if (report->parsed()) return cmd_report(report_target);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}

}  // namespace kvsim
