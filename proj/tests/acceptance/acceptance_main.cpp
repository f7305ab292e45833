// Acceptance gate: twelve independent checks, one pass/fail line each, exit 0
// only when every check passes. Each check pins its own tolerances and its
// wall-clock budget; a check that computes the right numbers too slowly fails.
// argv[1] must name the CLI binary (used by the report-determinism check).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kvsim/attention.hpp"
#include "kvsim/baseline_caches.hpp"
#include "kvsim/config.hpp"
#include "kvsim/engine.hpp"
#include "kvsim/head_profile.hpp"
#include "kvsim/pipeline_sim.hpp"
#include "kvsim/retrieval.hpp"
#include "kvsim/rng.hpp"
#include "kvsim/runner.hpp"
#include "kvsim/similarity_cache.hpp"
#include "kvsim/synthetic_model.hpp"
#include "support/reference_attention.hpp"
#include "support/reference_caches.hpp"
#include "support/stats.hpp"

namespace {

using namespace kvsim;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

std::string fmt(const char* pattern, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

// The drift sweep shared by the overlap-correlation and hit-ratio checks.
const std::vector<double> kSigmaSweep{0.005, 0.01, 0.02, 0.05, 0.1, 0.2};

// Threshold and horizon for the hit-ratio drift sweep. At 0.8 the slowest
// drift still misses occasionally within the horizon while the fastest drift
// still hits occasionally right after a label refresh, so the mean ratio
// stays strictly ordered across the whole sweep instead of saturating.
constexpr double kSweepTau = 0.8;
constexpr int kSweepSteps = 200;

// ---------------------------------------------------------------------------
// 1. Threshold curve: eta at full importance, -1 at zero, and an independent
//    long-double evaluation at the midpoint.

void criterion1() {
    require(std::abs(compute_threshold(1.0, 0.8, 3.0) - 0.8) <= 1e-12,
            "threshold at s=1 is not eta");
    require(std::abs(compute_threshold(0.0, 0.8, 3.0) - (-1.0)) <= 1e-12,
            "threshold at s=0 is not -1");
    const long double sp = 0.125L;  // 0.5^3
    const long double pi = std::acos(-1.0L);
    double want = static_cast<double>(std::cos(sp * std::acos(0.8L) + (1.0L - sp) * pi));
    double got = compute_threshold(0.5, 0.8, 3.0);
    require(std::abs(got - want) <= 1e-9,
            fmt("threshold midpoint %.17g differs from long-double value %.17g", got, want));
}

// ---------------------------------------------------------------------------
// 2. Weighted harmonic aggregation: equal similarities pass through exactly;
//    the aggregate is strictly increasing in every similarity coordinate.

void criterion2() {
    std::mt19937_64 gen(mix_seed(2202));
    std::uniform_int_distribution<int> group(1, 8);
    std::uniform_real_distribution<double> sim_value(0.05, 1.0);
    std::uniform_real_distribution<double> weight_value(0.001, 1.0);
    for (int i = 0; i < 10000; ++i) {
        int m = group(gen);
        double s = sim_value(gen);
        std::vector<double> sims(m, s), weights(m);
        for (double& w : weights) w = weight_value(gen);
        double got = aggregate_similarity(sims, weights);
        require(std::abs(got - s) <= 1e-12,
                fmt("equal-similarity aggregate %.17g != common value %.17g", got, s));
    }

    const std::vector<double> weights{0.9, 0.4, 0.7, 0.2};
    for (int axis = 0; axis < 4; ++axis) {
        double prev = 0.0;
        for (int i = 0; i < 20; ++i) {
            std::vector<double> sims{0.6, 0.5, 0.8, 0.4};
            sims[axis] = 0.05 + 0.95 * i / 19.0;
            double a = aggregate_similarity(sims, weights);
            if (i > 0)
                require(a > prev, "aggregate not strictly increasing in a similarity coordinate");
            prev = a;
        }
    }
}

// ---------------------------------------------------------------------------
// 3. Positive scaling of the query must not change either retriever's
//    selection: exact scores scale monotonically, hash bits are sign-based.

void criterion3() {
    const int n = 128, dim = 32, k = 13;
    for (int i = 0; i < 1000; ++i) {
        std::mt19937_64 gen(mix_seed(3303, i));
        Matrix keys(n, dim);
        fill_normal(gen, keys.data);
        std::vector<double> q(dim);
        fill_normal(gen, q);
        std::vector<double> scaled = q;
        for (double& x : scaled) x *= 3.7;

        require(topk_select_exact(q, keys, k) == topk_select_exact(scaled, keys, k),
                "exact selection changed under positive query scaling");

        RetrievalMetadata meta =
            encode(keys, RetrieverVariant::kSignHash, 256, mix_seed(3304, i));
        require(retrieve(q, meta, k) == retrieve(scaled, meta, k),
                "sign-hash selection changed under positive query scaling");
    }
}

// ---------------------------------------------------------------------------
// 4. Forced-miss decode with the exact retriever and no cross-layer drift
//    must reproduce a standalone top-k oracle's attention outputs.

void criterion4() {
    SyntheticConfig scfg;
    scfg.shape = ModelShape{4, 4, 2, 32, 2};
    scfg.d_model = 128;
    scfg.n_prompt = 512;
    scfg.steps = 200;
    scfg.sigma_layer = 0.0;  // approximate queries coincide with true ones
    scfg.seed = 404;
    SyntheticModel source(scfg);

    EngineConfig ecfg;
    ecfg.shape = scfg.shape;
    ecfg.k = 52;
    ecfg.mode.always_miss = true;
    ecfg.retriever = RetrieverVariant::kExact;
    ecfg.collect_outputs = true;
    ecfg.compute_oracle_error = false;
    DecodeEngine engine(ecfg, uniform_profiles(ecfg.shape, 0.9), layer0_only_plan(ecfg.shape),
                        source);
    engine.run();

    const ModelShape& sh = scfg.shape;
    const int m = sh.group_size();
    std::vector<std::vector<Matrix>> keys(sh.num_layers), values(sh.num_layers);
    for (int l = 0; l < sh.num_layers; ++l)
        for (int g = 0; g < sh.num_kv_heads; ++g) {
            keys[l].push_back(source.prompt_k(l, g));
            values[l].push_back(source.prompt_v(l, g));
        }

    double worst = 0.0;
    for (int t = 1; t <= scfg.steps; ++t) {
        for (int l = 0; l < sh.num_layers; ++l) {
            std::vector<std::vector<int>> selections(sh.num_kv_heads);
            for (int g = 0; g < sh.num_kv_heads; ++g) {
                RetrievalMetadata meta = encode(keys[l][g], RetrieverVariant::kExact);
                std::vector<std::vector<ScoredIndex>> proposals(m);
                for (int j = 0; j < m; ++j)
                    proposals[j] = retrieve_scored(source.true_query(t, l, sh.first_q_head(g) + j),
                                                   meta, ecfg.k);
                selections[g] = merge_group_topk(proposals, ecfg.k);
            }
            for (int g = 0; g < sh.num_kv_heads; ++g) {
                keys[l][g].append_row(source.new_k_row(t, l, g));
                values[l][g].append_row(source.new_v_row(t, l, g));
            }
            std::vector<int> window =
                sink_recent_indices(scfg.n_prompt + t, ecfg.sink_tokens, ecfg.recent_tokens);
            const Matrix& got = engine.collected_outputs()[t - 1][l];
            for (int g = 0; g < sh.num_kv_heads; ++g) {
                std::vector<int> attend;
                std::set_union(selections[g].begin(), selections[g].end(), window.begin(),
                               window.end(), std::back_inserter(attend));
                for (int j = 0; j < m; ++j) {
                    int h = sh.first_q_head(g) + j;
                    AttentionOutput want = topk_attention(source.true_query(t, l, h), keys[l][g],
                                                          values[l][g], attend);
                    worst = std::max(worst, testing::rel_l2(got.row_span(h), want.values));
                }
            }
        }
    }
    require(worst <= 1e-5,
            fmt("worst relative L2 against the standalone oracle is %.3g", worst));
}

// ---------------------------------------------------------------------------
// 5. Blend endpoints are exact, and the least-squares importance fit recovers
//    a planted blend weight.

void criterion5() {
    std::mt19937_64 gen(mix_seed(5505));
    const int n = 40, dim = 16;
    Matrix keys(n, dim), values(n, dim);
    fill_normal(gen, keys.data);
    fill_normal(gen, values.data);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> q(dim);
        fill_normal(gen, q);
        AttentionOutput full = full_attention(q, keys, values);
        AttentionOutput streaming = streaming_attention(q, keys, values, 4, 8);
        require(blended_attention(q, keys, values, 1.0, 4, 8).values == full.values,
                "alpha=1 blend differs from full attention");
        require(blended_attention(q, keys, values, 0.0, 4, 8).values == streaming.values,
                "alpha=0 blend differs from streaming attention");
    }

    for (int ai = 1; ai <= 9; ++ai) {
        double alpha = ai / 10.0;
        std::vector<BlendSample> samples(50);
        for (BlendSample& s : samples) {
            s.full.resize(dim);
            s.streaming.resize(dim);
            s.target.resize(dim);
            fill_normal(gen, s.full);
            fill_normal(gen, s.streaming);
            for (int c = 0; c < dim; ++c)
                s.target[c] = alpha * s.full[c] + (1.0 - alpha) * s.streaming[c];
        }
        FitResult fit = fit_importance(samples);
        require(!fit.degenerate, "planted blend reported as degenerate");
        require(std::abs(fit.alpha - alpha) <= 1e-6,
                fmt("fit recovered %.9f for planted weight %.1f", fit.alpha, alpha));
    }
}

// ---------------------------------------------------------------------------
// 6. Across the drift sweep, the cosine between adjacent decode queries must
//    rank-correlate with their top-k selection overlap over a fixed key pool.

void criterion6() {
    const int n = 2048, dim = 64;
    const int k = static_cast<int>(std::ceil(0.10 * n));
    std::vector<double> cosines, overlaps;
    for (size_t si = 0; si < kSigmaSweep.size(); ++si) {
        for (int seq = 0; seq < 5; ++seq) {
            SyntheticConfig scfg;
            scfg.shape = ModelShape{1, 1, 1, dim, 2};
            scfg.d_model = 128;
            scfg.n_prompt = n;
            scfg.steps = 13;
            scfg.sigma_step = kSigmaSweep[si];
            scfg.sigma_layer = 0.0;
            scfg.seed = mix_seed(6606, si, seq);
            SyntheticModel model(scfg);
            const Matrix& keys = model.prompt_k(0, 0);

            std::vector<std::vector<int>> picks(scfg.steps + 1);
            for (int t = 1; t <= scfg.steps; ++t) {
                picks[t] = topk_select_exact(model.true_query(t, 0, 0), keys, k);
                std::sort(picks[t].begin(), picks[t].end());
            }
            for (int t = 1; t < scfg.steps; ++t) {
                CosineResult c =
                    cosine_similarity(model.true_query(t, 0, 0), model.true_query(t + 1, 0, 0));
                require(!c.degenerate, "degenerate query pair in the drift sweep");
                std::vector<int> common;
                std::set_intersection(picks[t].begin(), picks[t].end(), picks[t + 1].begin(),
                                      picks[t + 1].end(), std::back_inserter(common));
                cosines.push_back(c.value);
                overlaps.push_back(static_cast<double>(common.size()) / k);
            }
        }
    }
    double rho = testing::spearman(cosines, overlaps);
    require(rho >= 0.8, fmt("Spearman correlation %.4f is below 0.8", rho));
}

// ---------------------------------------------------------------------------
// Shared fixture: one default-configuration experiment, reused by the
// hit-ratio band, latency-ordering, and byte-conservation checks.

const RunOutput& shared_default_run() {
    static RunOutput out = [] {
        RunConfig cfg;
        cfg.run.workers = 4;
        cfg.run.dump_cache_state = false;
        cfg.validate();
        return run_experiment(cfg);
    }();
    return out;
}

const CellResult& cell_of(const RunOutput& out, const std::string& policy) {
    for (const CellResult& c : out.cells)
        if (c.policy == policy) return c;
    fail("default run is missing a " + policy + " cell");
}

// ---------------------------------------------------------------------------
// 7. Hit ratio: exactly 1.0 when the threshold is -1, strictly decreasing
//    across the drift sweep, and inside [0.5, 0.95] for the default run.

void criterion7() {
    SyntheticConfig scfg;
    scfg.shape = ModelShape{3, 4, 2, 8, 2};
    scfg.d_model = 32;
    scfg.n_prompt = 64;
    scfg.steps = 12;
    scfg.seed = 77;
    SyntheticModel all_hit_source(scfg);
    EngineConfig ecfg;
    ecfg.shape = scfg.shape;
    ecfg.k = 8;
    ecfg.sink_tokens = 2;
    ecfg.recent_tokens = 8;
    DecodeEngine floor_engine(ecfg, uniform_profiles(ecfg.shape, -1.0),
                              layer0_only_plan(ecfg.shape), all_hit_source);
    floor_engine.run();
    require(floor_engine.metrics().hit_ratio() == 1.0 && floor_engine.metrics().misses() == 0,
            "threshold -1 does not hit on every lookup");
    require(floor_engine.metrics().transferred_bytes() == 0,
            "threshold -1 still transferred bytes");

    std::vector<double> ratios;
    for (size_t si = 0; si < kSigmaSweep.size(); ++si) {
        double sum = 0.0;
        for (uint64_t seed = 1; seed <= 3; ++seed) {
            SyntheticConfig sweep;
            sweep.shape = ModelShape{2, 4, 2, 32, 2};
            sweep.d_model = 128;
            sweep.n_prompt = 512;
            sweep.steps = kSweepSteps;
            sweep.sigma_step = kSigmaSweep[si];
            sweep.sigma_layer = 0.0;
            sweep.seed = mix_seed(7707, si, seed);
            SyntheticModel source(sweep);
            EngineConfig sweep_cfg;
            sweep_cfg.shape = sweep.shape;
            sweep_cfg.k = 52;
            DecodeEngine engine(sweep_cfg, uniform_profiles(sweep_cfg.shape, kSweepTau),
                                layer0_only_plan(sweep_cfg.shape), source);
            engine.run();
            sum += engine.metrics().hit_ratio();
        }
        ratios.push_back(sum / 3.0);
    }
    for (size_t i = 0; i + 1 < ratios.size(); ++i)
        require(ratios[i] > ratios[i + 1],
                fmt("mean hit ratio not strictly decreasing: %.4f then %.4f", ratios[i],
                    ratios[i + 1]));

    double band = cell_of(shared_default_run(), "similarity").hit_ratio;
    require(band >= 0.5 && band <= 0.95,
            fmt("default-run hit ratio %.4f outside [0.5, 0.95]", band));
}

// ---------------------------------------------------------------------------
// 8. Transfer timing: exact value on a power-of-two case, then the overlap
//    clamp and sync-bubble additivity over a randomized grid.

void criterion8() {
    CostModel wide;
    wide.pcie_peak_bw = 16.0 * 1024.0 * 1024.0 * 1024.0;
    require(transfer_time(4ull << 20, TransferEngine::kZeroCopy, wide) == 0.000244140625,
            "4 MiB over 16 GiB/s is not exactly 244.140625 us");

    const CostModel cm;
    std::mt19937_64 gen(mix_seed(8808));
    std::uniform_int_distribution<uint64_t> bytes(0, 1ull << 22);
    std::uniform_real_distribution<double> window(0.0, 3e-4);
    std::uniform_real_distribution<double> cost(0.0, 1e-4);
    for (int i = 0; i < 100; ++i) {
        LayerPlan plan;
        plan.layer = 1 + i % 3;
        plan.transfer_bytes = bytes(gen);
        plan.engine = i % 2 ? TransferEngine::kGatherCopy : TransferEngine::kZeroCopy;
        plan.prefetch_enabled = i % 3 != 0;
        plan.compute_window_prev_s = window(gen);
        plan.mgmt_s = cost(gen);
        plan.retrieval_s = cost(gen);
        plan.n_sync_events = i % 4;

        double raw = transfer_time(plan.transfer_bytes, plan.engine, cm);
        double hidden = plan.prefetch_enabled ? std::min(raw, plan.compute_window_prev_s) : 0.0;
        LayerTiming cpu = schedule_layer(plan, cm, SyncMode::kCpuCentric);
        LayerTiming gpu = schedule_layer(plan, cm, SyncMode::kGpuCentric);
        for (const LayerTiming& t : {cpu, gpu}) {
            require(t.transfer_s == raw, "raw transfer time mismatch");
            require(t.hidden_s == hidden, "hidden portion is not min(transfer, window)");
            require(std::abs(t.exposed_s - (raw - hidden)) <= 1e-12, "exposed != raw - hidden");
            require(std::abs(t.total_s - (t.compute_s + t.exposed_s + t.mgmt_s + t.sync_s +
                                          t.retrieval_s)) <= 1e-12,
                    "total is not the sum of its parts");
        }
        require(std::abs(cpu.sync_s - plan.n_sync_events * cm.sync_bubble_cpu_centric_s) <= 1e-12,
                "host-blocking sync bubble is not events * bubble");
        require(gpu.sync_s == 0.0, "device-polled sync should cost nothing");
        require(std::abs((cpu.total_s - gpu.total_s) -
                         plan.n_sync_events * cm.sync_bubble_cpu_centric_s) <= 1e-12,
                "sync mode difference is not additive");
    }
}

// ---------------------------------------------------------------------------
// 9. Block caches against the flat reference simulator: every trace of length
//    up to 12 over 4 blocks, then long seeded random multi-block traces.

void criterion9() {
    const uint64_t expect = (static_cast<uint64_t>(1) << 26) / 3 - 1;  // (4^13 - 4) / 3
    uint64_t compared[2] = {0, 0};
    std::exception_ptr errors[2];
    auto sweep = [&](int slot, BlockPolicy policy) {
        try {
            compared[slot] = testing::exhaustive_equivalence(policy, 2, 4, 12);
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    };
    std::thread lru(sweep, 0, BlockPolicy::kLru);
    std::thread lfu(sweep, 1, BlockPolicy::kLfu);
    lru.join();
    lfu.join();
    for (std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
    require(compared[0] == expect, "LRU exhaustive sweep diverged from the reference");
    require(compared[1] == expect, "LFU exhaustive sweep diverged from the reference");

    const int block_size = 32, capacity = 16, num_blocks = 64;
    for (int trace = 0; trace < 100; ++trace) {
        BlockPolicy policy = trace % 2 ? BlockPolicy::kLfu : BlockPolicy::kLru;
        std::mt19937_64 gen(mix_seed(9909, trace));
        std::uniform_int_distribution<int> token(0, num_blocks * block_size - 1);
        std::uniform_int_distribution<int> count(1, 8);
        BlockCache cache(policy, block_size, capacity, 512);
        testing::RefBlockCache ref(policy, capacity);
        for (int step = 0; step < 10000; ++step) {
            std::vector<int> tokens(count(gen));
            for (int& t : tokens) t = token(gen);
            std::vector<int> blocks = blocks_of_tokens(tokens, block_size);
            AccessPlan plan = cache.lookup(tokens);
            require(plan.miss_blocks == ref.lookup_misses(blocks),
                    "miss classification diverged from the reference");
            cache.update(plan, plan.miss_blocks);
            ref.update(blocks);
            std::vector<int> resident = cache.resident();
            require(resident == ref.resident(), "resident sets diverged from the reference");
            if (policy == BlockPolicy::kLfu)
                for (int b : resident)
                    require(cache.use_count_of(b) == ref.use_count_of(b),
                            "LFU use counts diverged from the reference");
        }
    }
}

// ---------------------------------------------------------------------------
// 10. Default calibration ordering: similarity beats block-LRU beats
//     prefetch-only on modeled per-step latency, and block-LRU spends a
//     strictly larger share of that latency on cache management.

void criterion10() {
    const RunOutput& out = shared_default_run();
    const CellResult& sim = cell_of(out, "similarity");
    const CellResult& lru = cell_of(out, "lru");
    const CellResult& prefetch = cell_of(out, "prefetch_only");
    require(sim.timeline.steps > 0 && sim.timeline.steps == lru.timeline.steps &&
                lru.timeline.steps == prefetch.timeline.steps,
            "cells ran different step counts");

    double per_step_sim = sim.timeline.totals.total_s / sim.timeline.steps;
    double per_step_lru = lru.timeline.totals.total_s / lru.timeline.steps;
    double per_step_prefetch = prefetch.timeline.totals.total_s / prefetch.timeline.steps;
    require(per_step_sim < per_step_lru,
            fmt("similarity per-step %.3g is not below block-LRU %.3g", per_step_sim,
                per_step_lru));
    require(per_step_lru < per_step_prefetch,
            fmt("block-LRU per-step %.3g is not below prefetch-only %.3g", per_step_lru,
                per_step_prefetch));

    double share_sim = sim.timeline.share(sim.timeline.totals.mgmt_s);
    double share_lru = lru.timeline.share(lru.timeline.totals.mgmt_s);
    require(share_lru > share_sim,
            fmt("block-LRU management share %.4f not above similarity's %.4f", share_lru,
                share_sim));
}

// ---------------------------------------------------------------------------
// 11. Byte conservation: transfers equal the closed-form miss formula, heads
//     pinned on device never transfer, and the modeled footprint matches the
//     closed form rebuilt from per-head state.

void criterion11() {
    SyntheticConfig scfg;
    scfg.shape = ModelShape{3, 4, 2, 8, 2};
    scfg.d_model = 32;
    scfg.n_prompt = 64;
    scfg.steps = 12;
    scfg.seed = 1111;
    SyntheticModel source(scfg);

    const uint64_t entry_bytes = 2ull * 8 * 8 * 2;  // k rows of K and V
    const uint64_t block_bytes = 4ull * 2 * 8 * 2;  // 4-token blocks
    for (Policy policy :
         {Policy::kSimilarity, Policy::kLru, Policy::kLfu, Policy::kPrefetchOnly}) {
        EngineConfig ecfg;
        ecfg.shape = scfg.shape;
        ecfg.k = 8;
        ecfg.sink_tokens = 2;
        ecfg.recent_tokens = 8;
        ecfg.policy = policy;
        ecfg.block_size = 4;
        ecfg.block_capacity = 4;
        DecodeEngine engine(ecfg, uniform_profiles(ecfg.shape, 0.9),
                            layer0_only_plan(ecfg.shape), source);
        engine.run();
        const DecodeMetrics& metrics = engine.metrics();

        uint64_t unit = policy == Policy::kLru || policy == Policy::kLfu ? block_bytes
                                                                         : entry_bytes;
        require(metrics.transferred_bytes() == metrics.misses() * unit,
                "transferred bytes differ from misses times the transfer unit");

        uint64_t footprint = 0;
        for (int l = 0; l < scfg.shape.num_layers; ++l)
            for (int g = 0; g < scfg.shape.num_kv_heads; ++g) {
                const HeadMetrics& hm = metrics.heads[l][g];
                const HeadStore& store = engine.head(l, g);
                if (l == 0) {
                    require(hm.transferred_bytes == 0 && hm.hits == 0 && hm.misses == 0,
                            "device-pinned head transferred or counted lookups");
                    require(hm.persistent_bytes ==
                                static_cast<uint64_t>(scfg.steps) * entry_bytes,
                            "device-pinned head served the wrong byte volume");
                    continue;
                }
                require(hm.transferred_bytes == hm.misses * unit,
                        "per-head transfer is not misses times the transfer unit");
                if (policy == Policy::kLru || policy == Policy::kLfu)
                    footprint += store.blocks->resident_blocks() * block_bytes +
                                 2ull * store.window->held_tokens() * 8 * 2;
            }
        if (policy == Policy::kSimilarity || policy == Policy::kPrefetchOnly) {
            int held = engine.head(1, 0).window->held_tokens();
            for (int l = 1; l < scfg.shape.num_layers; ++l)
                for (int g = 0; g < scfg.shape.num_kv_heads; ++g)
                    require(engine.head(l, g).window->held_tokens() == held,
                            "window sizes diverged across heads");
            footprint = cache_bytes(4, ecfg.k, held, scfg.shape.num_layers,
                                    scfg.shape.num_q_heads, scfg.shape.head_dim,
                                    scfg.shape.bytes_per_element);
        }
        require(engine.modeled_cache_bytes() == footprint,
                "modeled cache footprint differs from the closed form");
    }

    const RunOutput& out = shared_default_run();
    for (const CellResult& cell : out.cells) {
        uint64_t unit = cell.policy == "lru" || cell.policy == "lfu"
                            ? 32ull * 2 * 64 * 2
                            : 2ull * cell.k * 64 * 2;
        require(cell.transferred_bytes == cell.misses * unit,
                "default-run cell " + cell.policy +
                    " transferred bytes differ from the closed form");
    }
}

// ---------------------------------------------------------------------------
// 12. Report determinism: the CLI run twice on the same config, with
//     different worker counts, must produce byte-identical report files.

void criterion12(const std::string& cli) {
    namespace fs = std::filesystem;
    fs::path base = fs::temp_directory_path() / "kvsim_acceptance_determinism";
    fs::remove_all(base);
    fs::create_directories(base);

    RunConfig cfg;
    cfg.model = ModelShape{2, 4, 2, 16, 2};
    cfg.workload.d_model = 64;
    cfg.workload.n_prompt = 128;
    cfg.workload.steps = 8;
    cfg.workload.sequences = 2;
    cfg.workload.seeds = {1, 2};
    cfg.policies = {"similarity", "lru"};
    cfg.profiling.sequences = 2;
    cfg.profiling.steps = 8;
    cfg.profiling.blend_sequences = 2;
    cfg.profiling.blend_steps = 4;
    cfg.profiling.n_prompt = 64;
    cfg.run.out_dir = base.string();
    cfg.run.label = "det";
    cfg.validate();
    fs::path config_path = base / "config.json";
    std::ofstream(config_path) << config_to_json(cfg);

    auto invoke = [&](const std::string& workers) {
        std::string cmd = "\"" + cli + "\" run -c \"" + config_path.string() + "\" --workers " +
                          workers + " > /dev/null";
        require(std::system(cmd.c_str()) == 0, "CLI run with " + workers + " workers failed");
    };
    invoke("1");
    invoke("3");

    fs::path first = base / "det", second = base / "det_2";
    require(fs::is_directory(first) && fs::is_directory(second),
            "expected an appended second report directory");

    auto listing = [](const fs::path& dir) {
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(dir))
            names.push_back(entry.path().filename().string());
        std::sort(names.begin(), names.end());
        return names;
    };
    std::vector<std::string> names = listing(first);
    require(!names.empty(), "first report directory is empty");
    require(names == listing(second), "report file sets differ between runs");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    for (const std::string& name : names)
        require(slurp(first / name) == slurp(second / name), "report bytes differ: " + name);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-kvsim-cli>\n");
        return 2;
    }
    const std::string cli = argv[1];

    struct Criterion {
        int number;
        const char* name;
        double budget_s;
        std::function<void()> check;
    };
    const std::vector<Criterion> criteria{
        {1, "threshold curve endpoints and midpoint", 1.0, criterion1},
        {2, "similarity aggregation identity and monotonicity", 5.0, criterion2},
        {3, "retrieval invariance under positive query scaling", 5.0, criterion3},
        {4, "decode engine matches the standalone top-k oracle", 30.0, criterion4},
        {5, "blend endpoints and importance-weight recovery", 10.0, criterion5},
        {6, "query drift predicts top-k overlap", 60.0, criterion6},
        {7, "hit-ratio endpoints, drift monotonicity, default band", 60.0, criterion7},
        {8, "transfer timing, overlap clamp, sync additivity", 1.0, criterion8},
        {9, "block caches match the reference simulator", 30.0, criterion9},
        {10, "per-step latency and management-share ordering", 60.0, criterion10},
        {11, "byte conservation and footprint accounting", 30.0, criterion11},
        {12, "byte-identical reports across worker counts", 60.0, [&cli] { criterion12(cli); }},
    };

    bool all_ok = true;
    for (const Criterion& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.check();
        } catch (const std::exception& e) {
            error = e.what();
        } catch (...) {
            error = "unknown exception";
        }
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count();
        if (error.empty() && elapsed >= c.budget_s)
            error = fmt("passed checks but took %.2fs, budget %.0fs", elapsed, c.budget_s);
        if (error.empty()) {
            std::printf("criterion %2d: PASS  (%6.2fs)  %s\n", c.number, elapsed, c.name);
        } else {
            all_ok = false;
            std::printf("criterion %2d: FAIL  (%6.2fs)  %s\n", c.number, elapsed, c.name);
            std::fprintf(stderr, "criterion %d failure: %s\n", c.number, error.c_str());
        }
        std::fflush(stdout);
        std::fflush(stderr);
    }
    return all_ok ? 0 : 1;
}
