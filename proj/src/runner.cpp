#include "kvsim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kvsim/profiler.hpp"
#include "kvsim/rng.hpp"
#include "kvsim/synthetic_model.hpp"
#include "kvsim/trace_io.hpp"
#include "kvsim/version.hpp"

namespace kvsim {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string fmt_axis(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string cell_id(const CellResult& c) {
    return c.policy + "_sig" + fmt_axis(c.sigma) + "_r" + fmt_axis(c.topk_ratio) + "_seed" +
           std::to_string(c.seed);
}

void merge_timing(LayerTiming& into, const LayerTiming& from) {
    into.compute_s += from.compute_s;
    into.transfer_s += from.transfer_s;
    into.hidden_s += from.hidden_s;
    into.exposed_s += from.exposed_s;
    into.mgmt_s += from.mgmt_s;
    into.sync_s += from.sync_s;
    into.retrieval_s += from.retrieval_s;
    into.total_s += from.total_s;
}

void merge_timeline(PipelineTimeline& into, const PipelineTimeline& from) {
    if (into.per_layer.empty()) {
        into = from;
        return;
    }
    if (from.per_layer.size() != into.per_layer.size())
        throw ShapeError("cannot merge timelines with different layer counts");
    for (size_t l = 0; l < from.per_layer.size(); ++l)
        merge_timing(into.per_layer[l], from.per_layer[l]);
    merge_timing(into.totals, from.totals);
    into.steps += from.steps;
}

// Workload sequence shared by every policy cell with the same (sigma, seed,
// sequence) coordinates, so policies compete on identical inputs.
uint64_t sequence_seed(uint64_t seed, int sequence) {
    return mix_seed(seed, 9000ULL + static_cast<uint64_t>(sequence));
}

struct CellSpec {
    Policy policy;
    double sigma;
    double topk_ratio;
    uint64_t seed;
    int ratio_index;
};

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("failed writing: " + path.string());
}

ordered_json timeline_json(const PipelineTimeline& tl, uint64_t total_steps) {
    ordered_json t;
    t["total_s"] = tl.totals.total_s;
    t["per_step_s"] = total_steps > 0 ? tl.totals.total_s / static_cast<double>(total_steps) : 0.0;
    t["compute_s"] = tl.totals.compute_s;
    t["transfer_raw_s"] = tl.totals.transfer_s;
    t["transfer_hidden_s"] = tl.totals.hidden_s;
    t["transfer_exposed_s"] = tl.totals.exposed_s;
    t["mgmt_s"] = tl.totals.mgmt_s;
    t["sync_s"] = tl.totals.sync_s;
    t["retrieval_s"] = tl.totals.retrieval_s;
    t["mgmt_share"] = tl.share(tl.totals.mgmt_s);
    return t;
}

}  // namespace

RunOutput run_experiment(const RunConfig& cfg) {
    cfg.validate();
    const ModelShape& shape = cfg.model;

    // Trace replay fixes the workload, so a sigma sweep would duplicate cells.
    const bool trace_mode = !cfg.workload.trace_path.empty();
    if (trace_mode && cfg.workload.sigma.size() != 1)
        throw ConfigError("trace replay ignores sigma; configure exactly one value");

    RunOutput out;
    out.eta = cfg.thresholds.eta;
    out.p = cfg.thresholds.p;
    out.epsilon = cfg.thresholds.epsilon;
    if (!cfg.placement.profile_path.empty()) {
        out.profiles = read_profiles(cfg.placement.profile_path, &out.eta, &out.p, &out.epsilon);
        if (static_cast<int>(out.profiles.size()) != shape.num_layers)
            throw ConfigError("loaded profiles do not cover the configured layers");
    } else {
        out.profiles = compute_profiles(cfg);
    }

    std::shared_ptr<TraceData> trace;
    int n_prompt = cfg.workload.n_prompt;
    int steps = cfg.workload.steps;
    int sequences = cfg.workload.sequences;
    if (trace_mode) {
        trace = std::make_shared<TraceData>(read_trace(cfg.workload.trace_path));
        if (trace->shape.num_layers != shape.num_layers ||
            trace->shape.num_q_heads != shape.num_q_heads ||
            trace->shape.num_kv_heads != shape.num_kv_heads ||
            trace->shape.head_dim != shape.head_dim)
            throw ConfigError("trace shape does not match the configured model");
        n_prompt = trace->n_prompt;
        steps = trace->n_steps;
        sequences = 1;
    }

    // One partition plan per top-k ratio: the transfer unit (and with it N_p)
    // scales with k. Non-similarity policies pin layer 0 only.
    for (size_t ri = 0; ri < cfg.attention.topk_ratio.size(); ++ri) {
        if (!cfg.placement.plan_path.empty()) {
            PartitionPlan plan = read_plan(cfg.placement.plan_path);
            if (static_cast<int>(plan.layers.size()) != shape.num_layers)
                throw ConfigError("loaded plan does not cover the configured layers");
            out.plans.push_back(std::move(plan));
            continue;
        }
        int k = static_cast<int>(std::ceil(cfg.attention.topk_ratio[ri] * n_prompt));
        k = std::max(k, 1);
        PartitionCosts costs;
        costs.t_comp_s = cfg.cost_model.t_comp_s;
        costs.pcie_bw = cfg.cost_model.pcie_peak_bw;
        costs.mem_head_bytes = 2.0 * k * shape.head_dim * shape.bytes_per_element;
        costs.persist_bytes_per_head =
            2ULL * static_cast<uint64_t>(n_prompt + steps) * shape.head_dim *
            shape.bytes_per_element;
        costs.hbm_budget_bytes = cfg.placement.hbm_budget_bytes;
        out.plans.push_back(plan_partition(out.profiles, costs));
    }
    PartitionPlan baseline_plan = layer0_only_plan(shape);

    std::vector<CellSpec> grid;
    for (const std::string& pname : cfg.policies)
        for (double sigma : cfg.workload.sigma)
            for (size_t ri = 0; ri < cfg.attention.topk_ratio.size(); ++ri)
                for (uint64_t seed : cfg.workload.seeds)
                    grid.push_back({policy_from_name(pname), sigma, cfg.attention.topk_ratio[ri],
                                    seed, static_cast<int>(ri)});

    out.cells.resize(grid.size());
    struct SeqSlot {
        DecodeMetrics metrics;
        PipelineTimeline timeline;
        std::string cache_state;
    };
    std::vector<std::vector<SeqSlot>> slots(grid.size());
    for (auto& s : slots) s.resize(sequences);

    // Work unit: one sequence of one cell. Slots are preallocated so workers
    // never contend; canonical ordering is restored when cells are reduced.
    struct Task {
        size_t cell;
        int sequence;
    };
    std::vector<Task> tasks;
    for (size_t c = 0; c < grid.size(); ++c)
        for (int s = 0; s < sequences; ++s) tasks.push_back({c, s});

    std::atomic<size_t> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex error_mu;

    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& task = tasks[i];
            const CellSpec& spec = grid[task.cell];
            try {
                std::unique_ptr<StepSource> source;
                if (trace_mode) {
                    source = std::make_unique<TraceSource>(*trace);
                } else {
                    SyntheticConfig sc;
                    sc.shape = shape;
                    sc.d_model = cfg.workload.d_model;
                    sc.n_prompt = n_prompt;
                    sc.steps = steps;
                    sc.sigma_step = spec.sigma;
                    sc.sigma_layer = cfg.workload.sigma_layer;
                    sc.hot_fraction = cfg.workload.hot_fraction;
                    sc.hot_run_length = cfg.workload.hot_run_length;
                    sc.hot_boost = cfg.workload.hot_boost;
                    sc.seed = sequence_seed(spec.seed, task.sequence);
                    source = std::make_unique<SyntheticModel>(sc);
                }

                EngineConfig ec;
                ec.shape = shape;
                ec.k = std::max(1, static_cast<int>(std::ceil(spec.topk_ratio * n_prompt)));
                ec.sink_tokens = cfg.attention.sink_tokens;
                ec.recent_tokens = cfg.attention.recent_tokens;
                ec.retriever = cfg.retriever_variant();
                ec.hash_bits = cfg.retriever.hash_bits;
                ec.retriever_seed = mix_seed(spec.seed, 555ULL,
                                             static_cast<uint64_t>(task.sequence));
                ec.policy = spec.policy;
                ec.mode.always_miss = cfg.mode.always_miss;
                ec.mode.always_hit = cfg.mode.always_hit;
                ec.mode.tau_override = cfg.mode.tau_override;
                ec.cost = cfg.cost_model;
                ec.sync_override = cfg.sync_override();
                ec.block_size = cfg.block_cache.block_size;
                ec.block_capacity = std::max(
                    1, static_cast<int>(std::ceil(cfg.block_cache.capacity_topk_multiple * ec.k /
                                                  cfg.block_cache.block_size)));
                ec.sync_events_similarity = cfg.sync.events_similarity;
                ec.sync_events_block = cfg.sync.events_block;
                ec.sync_events_prefetch = cfg.sync.events_prefetch;
                ec.compute_oracle_error = cfg.run.compute_oracle_error;

                const PartitionPlan& plan = spec.policy == Policy::kSimilarity
                                                ? out.plans[spec.ratio_index]
                                                : baseline_plan;
                DecodeEngine engine(ec, out.profiles, plan, *source);
                engine.run();

                SeqSlot& slot = slots[task.cell][task.sequence];
                slot.metrics = engine.metrics();
                slot.timeline = engine.timeline();
                if (spec.policy == Policy::kSimilarity && cfg.run.dump_cache_state &&
                    task.sequence == sequences - 1)
                    slot.cache_state = engine.cache_state_json();
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    int n_workers = std::min<int>(cfg.run.workers, static_cast<int>(tasks.size()));
    n_workers = std::max(n_workers, 1);
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    for (size_t c = 0; c < grid.size(); ++c) {
        const CellSpec& spec = grid[c];
        CellResult& cell = out.cells[c];
        cell.policy = policy_name(spec.policy);
        cell.sigma = spec.sigma;
        cell.topk_ratio = spec.topk_ratio;
        cell.seed = spec.seed;
        cell.k = std::max(1, static_cast<int>(std::ceil(spec.topk_ratio * n_prompt)));
        cell.sequences = sequences;
        cell.steps = steps;
        double err_sum = 0.0;
        uint64_t err_count = 0;
        for (int s = 0; s < sequences; ++s) {
            const SeqSlot& slot = slots[c][s];
            cell.hits += slot.metrics.hits();
            cell.misses += slot.metrics.misses();
            cell.transferred_bytes += slot.metrics.transferred_bytes();
            cell.persistent_served_bytes += slot.metrics.persistent_bytes();
            cell.cache_bytes = slot.metrics.cache_bytes_current;
            err_sum += slot.metrics.output_err_sum;
            err_count += slot.metrics.output_err_count;
            merge_timeline(cell.timeline, slot.timeline);
            if (!slot.cache_state.empty()) cell.cache_state = slot.cache_state;
        }
        cell.lookups = cell.hits + cell.misses;
        cell.hit_ratio =
            cell.lookups > 0 ? static_cast<double>(cell.hits) / cell.lookups : 0.0;
        cell.has_output_error = err_count > 0;
        cell.mean_output_error = err_count > 0 ? err_sum / static_cast<double>(err_count) : 0.0;
    }
    return out;
}

std::string resolve_run_dir(const RunConfig& cfg) {
    std::string base = cfg.run.out_dir;
    if (base.empty()) {
        const char* env = std::getenv("KVSIM_OUT_DIR");
        base = env && *env ? env : "runs";
    }
    fs::path dir = fs::path(base) / cfg.run.label;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        for (int i = 2;; ++i) {
            fs::path candidate = fs::path(base) / (cfg.run.label + "_" + std::to_string(i));
            if (!fs::exists(candidate) || fs::is_empty(candidate)) {
                dir = candidate;
                break;
            }
            if (i >= 10000) throw IoError("cannot find a free run directory under " + base);
        }
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory: " + dir.string());
    return dir.string();
}

namespace {

ordered_json results_json(const RunConfig& cfg, const RunOutput& out) {
    ordered_json doc;
    doc["tool"] = "kvsim";
    doc["version"] = kVersion;
    doc["config_hash"] = config_hash(cfg);
    doc["cells"] = ordered_json::array();
    for (const CellResult& c : out.cells) {
        ordered_json j;
        j["id"] = cell_id(c);
        j["policy"] = c.policy;
        j["sigma"] = c.sigma;
        j["topk_ratio"] = c.topk_ratio;
        j["seed"] = c.seed;
        j["k"] = c.k;
        j["sequences"] = c.sequences;
        j["steps"] = c.steps;
        ordered_json m;
        m["lookups"] = c.lookups;
        m["hits"] = c.hits;
        m["misses"] = c.misses;
        m["hit_ratio"] = c.hit_ratio;
        m["transferred_bytes"] = c.transferred_bytes;
        m["persistent_served_bytes"] = c.persistent_served_bytes;
        m["cache_bytes"] = c.cache_bytes;
        if (c.has_output_error) m["mean_output_error"] = c.mean_output_error;
        j["metrics"] = m;
        j["timeline"] = timeline_json(c.timeline, static_cast<uint64_t>(c.steps) * c.sequences);
        doc["cells"].push_back(std::move(j));
    }
    return doc;
}

std::string results_csv(const RunOutput& out) {
    std::ostringstream csv;
    csv << "id,policy,sigma,topk_ratio,seed,k,sequences,steps,lookups,hits,misses,hit_ratio,"
           "transferred_bytes,persistent_served_bytes,cache_bytes,mean_output_error,total_s,"
           "per_step_s,compute_s,transfer_exposed_s,transfer_hidden_s,mgmt_s,sync_s,retrieval_s,"
           "mgmt_share\n";
    for (const CellResult& c : out.cells) {
        uint64_t n = static_cast<uint64_t>(c.steps) * c.sequences;
        double per_step = n > 0 ? c.timeline.totals.total_s / static_cast<double>(n) : 0.0;
        csv << cell_id(c) << ',' << c.policy << ',' << fmt_double(c.sigma) << ','
            << fmt_double(c.topk_ratio) << ',' << c.seed << ',' << c.k << ',' << c.sequences
            << ',' << c.steps << ',' << c.lookups << ',' << c.hits << ',' << c.misses << ','
            << fmt_double(c.hit_ratio) << ',' << c.transferred_bytes << ','
            << c.persistent_served_bytes << ',' << c.cache_bytes << ','
            << fmt_double(c.has_output_error ? c.mean_output_error : 0.0) << ','
            << fmt_double(c.timeline.totals.total_s) << ',' << fmt_double(per_step) << ','
            << fmt_double(c.timeline.totals.compute_s) << ','
            << fmt_double(c.timeline.totals.exposed_s) << ','
            << fmt_double(c.timeline.totals.hidden_s) << ','
            << fmt_double(c.timeline.totals.mgmt_s) << ','
            << fmt_double(c.timeline.totals.sync_s) << ','
            << fmt_double(c.timeline.totals.retrieval_s) << ','
            << fmt_double(c.timeline.share(c.timeline.totals.mgmt_s)) << '\n';
    }
    return csv.str();
}

}  // namespace

std::string write_reports(const RunConfig& cfg_in, const RunOutput& out) {
    fs::path dir = resolve_run_dir(cfg_in);

    // Worker count changes scheduling, never results, so the recorded
    // config normalizes it; reports stay byte-identical across -w values.
    RunConfig cfg = cfg_in;
    cfg.run.workers = 1;
    std::vector<std::string> files;

    write_file(dir / "config.json", config_to_json(cfg));
    files.push_back("config.json");

    write_file(dir / "profiles.json", profiles_to_json(out.profiles, out.eta, out.p, out.epsilon));
    files.push_back("profiles.json");

    for (size_t ri = 0; ri < out.plans.size(); ++ri) {
        std::string name = "plan_r" + fmt_axis(cfg.attention.topk_ratio[ri]) + ".json";
        write_file(dir / name, plan_to_json(out.plans[ri]));
        files.push_back(name);
    }

    write_file(dir / "results.json", results_json(cfg, out).dump(2) + "\n");
    files.push_back("results.json");
    write_file(dir / "results.csv", results_csv(out));
    files.push_back("results.csv");

    for (const CellResult& c : out.cells) {
        if (cfg.run.write_breakdowns) {
            std::string stem = "breakdown_" + cell_id(c);
            write_file(dir / (stem + ".json"), breakdown_to_json(c.timeline) + "\n");
            files.push_back(stem + ".json");
            write_file(dir / (stem + ".csv"), breakdown_to_csv(c.timeline));
            files.push_back(stem + ".csv");
        }
        if (!c.cache_state.empty()) {
            std::string name = "cache_state_" + cell_id(c) + ".json";
            write_file(dir / name, c.cache_state + "\n");
            files.push_back(name);
        }
    }

    ordered_json manifest;
    manifest["tool"] = "kvsim";
    manifest["version"] = kVersion;
    manifest["config_hash"] = config_hash(cfg);
    manifest["files"] = files;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    return dir.string();
}

std::string render_results_table(const std::string& results_json_text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(results_json_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("results file is not valid JSON: ") + e.what());
    }
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-34s %-13s %8s %9s %12s %12s %11s %10s\n", "cell",
                  "policy", "sigma", "ratio", "hit_ratio", "xfer_MiB", "step_us", "mgmt_%");
    os << line;
    if (!doc.contains("cells")) throw IoError("results file has no cells array");
    for (const auto& c : doc.at("cells")) {
        double xfer_mib =
            c.at("metrics").at("transferred_bytes").get<double>() / (1024.0 * 1024.0);
        double per_step_us = c.at("timeline").at("per_step_s").get<double>() * 1e6;
        double mgmt_pct = c.at("timeline").at("mgmt_share").get<double>() * 100.0;
        std::snprintf(line, sizeof(line), "%-34s %-13s %8g %9g %12.4f %12.3f %11.2f %10.2f\n",
                      c.at("id").get<std::string>().c_str(),
                      c.at("policy").get<std::string>().c_str(), c.at("sigma").get<double>(),
                      c.at("topk_ratio").get<double>(),
                      c.at("metrics").at("hit_ratio").get<double>(), xfer_mib, per_step_us,
                      mgmt_pct);
        os << line;
    }
    return os.str();
}

}  // namespace kvsim
