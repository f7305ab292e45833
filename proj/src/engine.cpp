#include "kvsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <json.hpp>

#include "kvsim/attention.hpp"
#include "kvsim/rng.hpp"

namespace kvsim {

using ordered_json = nlohmann::ordered_json;

std::string policy_name(Policy p) {
    switch (p) {
        case Policy::kSimilarity: return "similarity";
        case Policy::kLru: return "lru";
        case Policy::kLfu: return "lfu";
        case Policy::kPrefetchOnly: return "prefetch_only";
    }
    throw ArgumentError("unknown policy");
}

Policy policy_from_name(const std::string& name) {
    if (name == "similarity") return Policy::kSimilarity;
    if (name == "lru") return Policy::kLru;
    if (name == "lfu") return Policy::kLfu;
    if (name == "prefetch_only") return Policy::kPrefetchOnly;
    throw ConfigError("unknown policy name: " + name);
}

uint64_t DecodeMetrics::hits() const {
    uint64_t n = 0;
    for (const auto& layer : heads)
        for (const auto& h : layer) n += h.hits;
    return n;
}

uint64_t DecodeMetrics::misses() const {
    uint64_t n = 0;
    for (const auto& layer : heads)
        for (const auto& h : layer) n += h.misses;
    return n;
}

double DecodeMetrics::hit_ratio() const {
    uint64_t n = lookups();
    return n == 0 ? 0.0 : static_cast<double>(hits()) / static_cast<double>(n);
}

uint64_t DecodeMetrics::transferred_bytes() const {
    uint64_t n = 0;
    for (const auto& layer : heads)
        for (const auto& h : layer) n += h.transferred_bytes;
    return n;
}

uint64_t DecodeMetrics::persistent_bytes() const {
    uint64_t n = 0;
    for (const auto& layer : heads)
        for (const auto& h : layer) n += h.persistent_bytes;
    return n;
}

double DecodeMetrics::mean_output_error() const {
    return output_err_count == 0 ? 0.0 : output_err_sum / static_cast<double>(output_err_count);
}

namespace {

bool uses_approx_queries(Policy p) {
    return p == Policy::kSimilarity || p == Policy::kPrefetchOnly;
}

bool is_block_policy(Policy p) { return p == Policy::kLru || p == Policy::kLfu; }

// Ascending union of two ascending duplicate-free index lists.
std::vector<int> union_indices(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

double relative_l2(std::span<const double> got, std::span<const double> want) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        double d = got[i] - want[i];
        num += d * d;
        den += want[i] * want[i];
    }
    if (den == 0.0) return 0.0;
    return std::sqrt(num / den);
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& indices) {
    Matrix out;
    for (int idx : indices) out.append_row(m.row_span(idx));
    return out;
}

}  // namespace

DecodeEngine::DecodeEngine(const EngineConfig& cfg, const HeadProfiles& profiles,
                           const PartitionPlan& plan, const StepSource& source)
    : cfg_(cfg), profiles_(profiles), source_(source) {
    const ModelShape& shape = cfg_.shape;
    shape.validate();
    if (shape.num_layers != source.shape().num_layers ||
        shape.num_q_heads != source.shape().num_q_heads ||
        shape.num_kv_heads != source.shape().num_kv_heads ||
        shape.head_dim != source.shape().head_dim)
        throw ArgumentError("engine shape does not match the step source");
    if (cfg_.k < 1) throw ArgumentError("k must be at least 1");
    if (cfg_.k > source.prompt_tokens())
        throw ArgumentError("k exceeds the prompt length; nothing to select from at step 0");
    if (cfg_.sink_tokens < 0 || cfg_.recent_tokens < 0)
        throw ArgumentError("window sizes must be non-negative");
    if (is_block_policy(cfg_.policy)) {
        if (cfg_.block_size < 1) throw ConfigError("block_size must be positive");
        if (cfg_.block_capacity < 1)
            throw ConfigError("block policies need a positive block capacity");
    }
    if (cfg_.mode.always_hit && cfg_.mode.always_miss)
        throw ConfigError("always_hit and always_miss are mutually exclusive");
    if (static_cast<int>(profiles_.size()) != shape.num_layers)
        throw ArgumentError("profiles must cover every layer");
    for (const auto& layer : profiles_) {
        if (static_cast<int>(layer.size()) != shape.num_kv_heads)
            throw ArgumentError("profiles must cover every KV head");
        for (const auto& e : layer)
            if (static_cast<int>(e.q_importance.size()) != shape.group_size())
                throw ArgumentError("profile importance width must equal the group size");
    }
    if (static_cast<int>(plan.layers.size()) != shape.num_layers)
        throw ArgumentError("partition plan must cover every layer");

    sync_mode_ = cfg_.sync_override.value_or(cfg_.policy == Policy::kSimilarity
                                                 ? SyncMode::kGpuCentric
                                                 : SyncMode::kCpuCentric);

    // Sized once so HeadStore addresses stay stable: exact retrieval metadata
    // keeps pointers into these stores.
    store_.resize(shape.num_layers);
    metrics_.heads.resize(shape.num_layers);
    for (int l = 0; l < shape.num_layers; ++l) {
        store_[l].resize(shape.num_kv_heads);
        metrics_.heads[l].resize(shape.num_kv_heads);
        for (int g : plan.layers[l].persistent_heads) {
            if (g < 0 || g >= shape.num_kv_heads)
                throw ArgumentError("partition plan names a KV head outside the model");
            store_[l][g].tier = Placement::kPersistent;
        }
    }
}

uint64_t DecodeEngine::entry_bytes() const {
    return 2ULL * static_cast<uint64_t>(cfg_.k) * cfg_.shape.head_dim * cfg_.shape.bytes_per_element;
}

void DecodeEngine::prefill() {
    if (prefilled_) throw ContractError("prefill ran twice");
    const ModelShape& shape = cfg_.shape;
    const int m = shape.group_size();
    for (int l = 0; l < shape.num_layers; ++l) {
        for (int g = 0; g < shape.num_kv_heads; ++g) {
            HeadStore& hs = store_[l][g];
            hs.k = source_.prompt_k(l, g);
            hs.v = source_.prompt_v(l, g);
            hs.meta = encode(hs.k, cfg_.retriever, cfg_.hash_bits,
                             mix_seed(cfg_.retriever_seed, static_cast<uint64_t>(l),
                                      static_cast<uint64_t>(g)));
            if (hs.tier == Placement::kOffloaded) {
                hs.window = std::make_unique<SinkRecentBuffer>(cfg_.sink_tokens,
                                                               cfg_.recent_tokens, shape.head_dim);
                hs.window->reset_from(hs.k, hs.v);
                if (is_block_policy(cfg_.policy)) {
                    uint64_t bytes_per_block = 2ULL * cfg_.block_size * shape.head_dim *
                                               shape.bytes_per_element;
                    hs.blocks = std::make_unique<BlockCache>(
                        cfg_.policy == Policy::kLru ? BlockPolicy::kLru : BlockPolicy::kLfu,
                        cfg_.block_size, cfg_.block_capacity, bytes_per_block);
                }
            }

            // Step-0 selection always uses true queries: prefill computes them
            // on device before the first decode step needs a prediction.
            std::vector<int> sel = group_topk(0, l, g, true, hs.meta);
            if (hs.tier == Placement::kOffloaded) {
                if (cfg_.policy == Policy::kSimilarity) {
                    update_entry(hs.entry, sel, gather_rows(hs.k, sel), gather_rows(hs.v, sel), 0);
                    metrics_.heads[l][g].cache.last_update_step = 0;
                    hs.labels.assign(m, QueryLabel{});
                    for (int j = 0; j < m; ++j) {
                        auto q = source_.true_query(0, l, shape.first_q_head(g) + j);
                        hs.labels[j].q.assign(q.begin(), q.end());
                        hs.labels[j].valid = true;
                    }
                } else if (is_block_policy(cfg_.policy)) {
                    AccessPlan ap = hs.blocks->lookup(sel);
                    hs.blocks->update(ap, ap.miss_blocks);
                }
            }
        }
    }
    prefilled_ = true;
}

std::vector<int> DecodeEngine::group_topk(int t, int layer, int kv_head, bool use_true_query,
                                          const RetrievalMetadata& meta) {
    const ModelShape& shape = cfg_.shape;
    const int m = shape.group_size();
    std::vector<std::vector<ScoredIndex>> proposals(m);
    for (int j = 0; j < m; ++j) {
        int h = shape.first_q_head(kv_head) + j;
        auto q = use_true_query ? source_.true_query(t, layer, h)
                                : source_.approx_query(t, layer, h);
        proposals[j] = retrieve_scored(q, meta, cfg_.k);
    }
    return merge_group_topk(proposals, cfg_.k);
}

void DecodeEngine::decode_step() {
    if (!prefilled_) throw ContractError("decode_step before prefill");
    if (current_step_ >= source_.decode_steps())
        throw ContractError("decode_step past the end of the workload");
    const int t = ++current_step_;
    const ModelShape& shape = cfg_.shape;
    const int m = shape.group_size();
    const int n_pool = source_.prompt_tokens() + (t - 1);
    const int n_after = n_pool + 1;
    const CostModel& cm = cfg_.cost;

    if (cfg_.collect_outputs) outputs_.emplace_back();

    std::vector<LayerPlan> step_plan;
    step_plan.reserve(shape.num_layers);

    for (int l = 0; l < shape.num_layers; ++l) {
        bool any_offloaded = false;
        for (int g = 0; g < shape.num_kv_heads; ++g)
            if (store_[l][g].tier == Placement::kOffloaded) any_offloaded = true;

        LayerPlan plan;
        plan.layer = l;
        plan.engine = cfg_.policy == Policy::kPrefetchOnly ? TransferEngine::kGatherCopy
                                                           : TransferEngine::kZeroCopy;
        plan.prefetch_enabled = l > 0 && any_offloaded && uses_approx_queries(cfg_.policy);
        plan.compute_window_prev_s = l > 0 ? cm.t_comp_s : 0.0;

        // Phase 1: selection over the pre-append pool [0, n_pool). The new
        // token is attended through the recent window, never as a same-step
        // retrieval candidate.
        std::vector<std::vector<int>> selections(shape.num_kv_heads);
        std::vector<std::vector<int>> oracle_selections;
        if (cfg_.compute_oracle_error) oracle_selections.resize(shape.num_kv_heads);

        for (int g = 0; g < shape.num_kv_heads; ++g) {
            HeadStore& hs = store_[l][g];
            HeadMetrics& hm = metrics_.heads[l][g];

            if (cfg_.compute_oracle_error) {
                RetrievalMetadata exact = encode(hs.k, RetrieverVariant::kExact);
                oracle_selections[g] = group_topk(t, l, g, true, exact);
            }

            if (hs.tier == Placement::kPersistent) {
                selections[g] = group_topk(t, l, g, true, hs.meta);
                hm.persistent_bytes += entry_bytes();
                plan.retrieval_s += cm.c_retrieval_per_head_s;
                continue;
            }

            switch (cfg_.policy) {
                case Policy::kSimilarity: {
                    const HeadProfileEntry& prof = profiles_[l][g];
                    double tau = cfg_.mode.tau_override.value_or(prof.tau);
                    if (cfg_.mode.always_hit) {
                        selections[g] = hs.entry.indices;
                        hs.entry.last_lookup_hit = true;
                        hm.hits += 1;
                        hm.cache.hit_count += 1;
                        hm.cache.aggregated_history.push_back(1.0);
                        break;
                    }
                    std::vector<std::vector<double>> queries(m);
                    for (int j = 0; j < m; ++j) {
                        auto q = source_.approx_query(t, l, shape.first_q_head(g) + j);
                        queries[j].assign(q.begin(), q.end());
                    }
                    // Cosines never exceed 1, so a threshold of 2 forces the
                    // miss while still running the label update.
                    LookupResult res =
                        lookup(hs.labels, queries, prof.q_importance,
                               cfg_.mode.always_miss ? 2.0 : tau);
                    if (cfg_.mode.always_miss) res.reason = MissReason::kForcedMiss;
                    hm.cache.aggregated_history.push_back(res.aggregated);
                    if (res.hit) {
                        selections[g] = hs.entry.indices;
                        hs.entry.last_lookup_hit = true;
                        hm.hits += 1;
                        hm.cache.hit_count += 1;
                    } else {
                        hs.entry.last_lookup_hit = false;
                        std::vector<int> sel = group_topk(t, l, g, false, hs.meta);
                        update_entry(hs.entry, sel, gather_rows(hs.k, sel),
                                     gather_rows(hs.v, sel), t);
                        selections[g] = std::move(sel);
                        hm.misses += 1;
                        hm.cache.miss_count += 1;
                        hm.cache.last_update_step = t;
                        hm.transferred_bytes += entry_bytes();
                        plan.transfer_bytes += entry_bytes();
                        plan.mgmt_s += m * cm.c_label_update_per_head_s +
                                       static_cast<double>(entry_bytes()) * cm.c_merge_per_byte_s;
                        plan.retrieval_s += cm.c_retrieval_per_head_s;
                    }
                    break;
                }
                case Policy::kLru:
                case Policy::kLfu: {
                    selections[g] = group_topk(t, l, g, true, hs.meta);
                    AccessPlan ap = hs.blocks->lookup(selections[g]);
                    hs.blocks->update(ap, ap.miss_blocks);
                    uint64_t accessed = ap.hit_blocks.size() + ap.miss_blocks.size();
                    hm.hits += ap.hit_blocks.size();
                    hm.misses += ap.miss_blocks.size();
                    uint64_t moved = ap.miss_blocks.size() * hs.blocks->bytes_per_block();
                    hm.transferred_bytes += moved;
                    if (!ap.miss_blocks.empty()) hm.cache.last_update_step = t;
                    plan.transfer_bytes += moved;
                    plan.mgmt_s += static_cast<double>(accessed) *
                                       (cm.c_lookup_per_block_s + cm.c_list_update_per_block_s) +
                                   static_cast<double>(moved) * cm.c_merge_per_byte_s;
                    plan.retrieval_s += cm.c_retrieval_per_head_s;
                    break;
                }
                case Policy::kPrefetchOnly: {
                    selections[g] = group_topk(t, l, g, false, hs.meta);
                    hm.misses += 1;
                    hm.cache.last_update_step = t;
                    hm.transferred_bytes += entry_bytes();
                    plan.transfer_bytes += entry_bytes();
                    plan.retrieval_s += cm.c_retrieval_per_head_s;
                    break;
                }
            }
        }

        plan.n_sync_events = any_offloaded ? (cfg_.policy == Policy::kSimilarity
                                                  ? cfg_.sync_events_similarity
                                              : is_block_policy(cfg_.policy)
                                                  ? cfg_.sync_events_block
                                                  : cfg_.sync_events_prefetch)
                                           : 0;
        step_plan.push_back(plan);

        // Phase 2: the new token's KV lands in this layer's stores and
        // windows before attention runs.
        for (int g = 0; g < shape.num_kv_heads; ++g) {
            HeadStore& hs = store_[l][g];
            auto krow = source_.new_k_row(t, l, g);
            auto vrow = source_.new_v_row(t, l, g);
            hs.k.append_row(krow);
            hs.v.append_row(vrow);
            update_metadata(hs.meta, krow);
            if (hs.window) hs.window->advance(krow, vrow);
        }

        // Phase 3: attention with true queries over the selected tokens plus
        // the sink/recent window (which is how the new token gets attended).
        std::vector<int> window_idx =
            sink_recent_indices(n_after, cfg_.sink_tokens, cfg_.recent_tokens);
        if (cfg_.collect_outputs) outputs_.back().emplace_back(0, shape.head_dim);
        for (int g = 0; g < shape.num_kv_heads; ++g) {
            HeadStore& hs = store_[l][g];
            std::vector<int> attend = union_indices(selections[g], window_idx);

            // Bookkeeping guards. Selected rows are on device by construction
            // (either cache-resident or staged by this step's transfer), so
            // what needs cross-checking is the similarity entry against the
            // step's selection and the window buffer against the index
            // formula that attention uses.
            if (hs.tier == Placement::kOffloaded) {
                if (cfg_.policy == Policy::kSimilarity && selections[g] != hs.entry.indices)
                    throw ContractError("similarity entry drifted from the step's selection");
                for (int idx : window_idx)
                    if (!hs.window->holds(idx))
                        throw ContractError("sink/recent buffer does not hold a window token");
            }

            std::vector<int> oracle_attend;
            if (cfg_.compute_oracle_error)
                oracle_attend = union_indices(oracle_selections[g], window_idx);

            for (int j = 0; j < m; ++j) {
                int h = shape.first_q_head(g) + j;
                auto q = source_.true_query(t, l, h);
                AttentionOutput out = topk_attention(q, hs.k, hs.v, attend);
                if (cfg_.compute_oracle_error) {
                    AttentionOutput oracle = topk_attention(q, hs.k, hs.v, oracle_attend);
                    metrics_.output_err_sum += relative_l2(out.values, oracle.values);
                    metrics_.output_err_count += 1;
                }
                if (cfg_.collect_outputs) outputs_.back()[l].append_row(out.values);
            }
        }
    }

    timeline_.add_step(step_plan, cm, sync_mode_);
    metrics_.steps += 1;
    metrics_.cache_bytes_current = modeled_cache_bytes();
}

void DecodeEngine::run() {
    prefill();
    for (int t = 0; t < source_.decode_steps(); ++t) decode_step();
}

uint64_t DecodeEngine::host_bytes() const {
    uint64_t n = 0;
    for (const auto& layer : store_)
        for (const auto& hs : layer)
            if (hs.tier == Placement::kOffloaded)
                n += 2ULL * hs.k.rows * cfg_.shape.head_dim * cfg_.shape.bytes_per_element;
    return n;
}

uint64_t DecodeEngine::device_persistent_bytes() const {
    uint64_t n = 0;
    for (const auto& layer : store_)
        for (const auto& hs : layer)
            if (hs.tier == Placement::kPersistent)
                n += 2ULL * hs.k.rows * cfg_.shape.head_dim * cfg_.shape.bytes_per_element;
    return n;
}

uint64_t DecodeEngine::modeled_cache_bytes() const {
    const ModelShape& shape = cfg_.shape;
    int offloaded = 0;
    int held = 0;
    for (const auto& layer : store_)
        for (const auto& hs : layer)
            if (hs.tier == Placement::kOffloaded) {
                ++offloaded;
                if (hs.window) held = hs.window->held_tokens();
            }
    if (cfg_.policy == Policy::kSimilarity || cfg_.policy == Policy::kPrefetchOnly)
        return cache_bytes(offloaded, cfg_.k, held, shape.num_layers, shape.num_q_heads,
                           shape.head_dim, shape.bytes_per_element);
    uint64_t n = 0;
    for (const auto& layer : store_)
        for (const auto& hs : layer)
            if (hs.tier == Placement::kOffloaded && hs.blocks) {
                n += static_cast<uint64_t>(hs.blocks->resident_blocks()) *
                     hs.blocks->bytes_per_block();
                n += 2ULL * hs.window->held_tokens() * shape.head_dim * shape.bytes_per_element;
            }
    return n;
}

std::string DecodeEngine::cache_state_json() const {
    const ModelShape& shape = cfg_.shape;
    ordered_json root;
    root["policy"] = policy_name(cfg_.policy);
    root["sync_mode"] = sync_mode_ == SyncMode::kGpuCentric ? "gpu_centric" : "cpu_centric";
    root["k"] = cfg_.k;
    root["sink_tokens"] = cfg_.sink_tokens;
    root["recent_tokens"] = cfg_.recent_tokens;
    root["steps_run"] = metrics_.steps;
    ordered_json totals;
    totals["hits"] = metrics_.hits();
    totals["misses"] = metrics_.misses();
    totals["hit_ratio"] = metrics_.hit_ratio();
    totals["transferred_bytes"] = metrics_.transferred_bytes();
    totals["persistent_served_bytes"] = metrics_.persistent_bytes();
    totals["cache_bytes"] = metrics_.cache_bytes_current;
    totals["host_bytes"] = host_bytes();
    totals["device_persistent_bytes"] = device_persistent_bytes();
    totals["mean_output_error"] = metrics_.mean_output_error();
    root["totals"] = totals;

    ordered_json layers = ordered_json::array();
    for (int l = 0; l < shape.num_layers; ++l) {
        ordered_json lj;
        lj["layer"] = l;
        ordered_json heads = ordered_json::array();
        for (int g = 0; g < shape.num_kv_heads; ++g) {
            const HeadStore& hs = store_[l][g];
            const HeadMetrics& hm = metrics_.heads[l][g];
            ordered_json hj;
            hj["kv_head"] = g;
            hj["placement"] =
                hs.tier == Placement::kPersistent ? "persistent" : "offloaded";
            hj["hits"] = hm.hits;
            hj["misses"] = hm.misses;
            hj["transferred_bytes"] = hm.transferred_bytes;
            hj["persistent_served_bytes"] = hm.persistent_bytes;
            if (hs.tier == Placement::kOffloaded) {
                hj["window_held_tokens"] = hs.window->held_tokens();
                if (cfg_.policy == Policy::kSimilarity) {
                    hj["entry_indices"] = hs.entry.indices;
                    hj["entry_last_update_step"] = hs.entry.last_update_step;
                    hj["labels_valid"] = std::count_if(hs.labels.begin(), hs.labels.end(),
                                                       [](const QueryLabel& q) { return q.valid; });
                    hj["aggregated_history"] = hm.cache.aggregated_history;
                }
                if (hs.blocks) {
                    const BlockCacheCounters& c = hs.blocks->counters();
                    hj["resident_blocks"] = hs.blocks->resident();
                    ordered_json cj;
                    cj["lookups"] = c.lookups;
                    cj["block_hits"] = c.block_hits;
                    cj["block_misses"] = c.block_misses;
                    cj["metadata_updates"] = c.metadata_updates;
                    cj["buffer_merge_bytes"] = c.buffer_merge_bytes;
                    cj["evictions"] = c.evictions;
                    hj["counters"] = cj;
                }
            }
            heads.push_back(hj);
        }
        lj["heads"] = heads;
        layers.push_back(lj);
    }
    root["layers"] = layers;
    return root.dump(2);
}

HeadProfiles uniform_profiles(const ModelShape& shape, double tau) {
    shape.validate();
    HeadProfiles out(shape.num_layers);
    for (auto& layer : out) {
        layer.resize(shape.num_kv_heads);
        for (auto& e : layer) {
            e.q_importance.assign(shape.group_size(), 1.0);
            e.kv_importance = 1.0;
            e.s_hat = 1.0;
            e.tau = tau;
            e.difficulty = 0.0;
        }
    }
    return out;
}

PartitionPlan layer0_only_plan(const ModelShape& shape) {
    shape.validate();
    PartitionPlan plan;
    plan.layers.resize(shape.num_layers);
    for (int g = 0; g < shape.num_kv_heads; ++g) plan.layers[0].persistent_heads.push_back(g);
    plan.layers[0].n_persist = shape.num_kv_heads;
    return plan;
}

}  // namespace kvsim
