#include "kvsim/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "kvsim/attention.hpp"
#include "kvsim/rng.hpp"
#include "kvsim/trace_io.hpp"

namespace kvsim {

using ordered_json = nlohmann::ordered_json;

HeadProfiles profile_heads(const ProfilerInputs& in) {
    if (in.sources.empty()) throw ArgumentError("profiling needs at least one probe workload");
    const ModelShape& shape = in.sources.front()->shape();
    shape.validate();
    for (const StepSource* s : in.sources) {
        if (s->shape().num_layers != shape.num_layers ||
            s->shape().num_q_heads != shape.num_q_heads ||
            s->shape().num_kv_heads != shape.num_kv_heads ||
            s->shape().head_dim != shape.head_dim)
            throw ArgumentError("probe workloads disagree on the model shape");
        if (s->decode_steps() < 1)
            throw ArgumentError("probe workloads need at least two query steps");
    }
    const int m = shape.group_size();

    // Expected query similarity, per layer and query head: mean cosine of
    // adjacent-step queries over all probe sequences.
    std::vector<std::vector<double>> s_hat(shape.num_layers);
    for (int l = 0; l < shape.num_layers; ++l) {
        QueryTrace trace;
        trace.num_q_heads = shape.num_q_heads;
        for (const StepSource* src : in.sources) {
            std::vector<Matrix> steps;
            for (int t = 0; t <= src->decode_steps(); ++t) {
                Matrix q(0, shape.head_dim);
                for (int h = 0; h < shape.num_q_heads; ++h)
                    q.append_row(src->true_query(t, l, h));
                steps.push_back(std::move(q));
            }
            trace.sequences.push_back(std::move(steps));
        }
        s_hat[l] = profile_similarity(trace);
    }

    // Importance: blend weight of full attention against the sink/recent
    // stream that best explains the exact top-k output, per query head.
    std::vector<std::vector<double>> importance(shape.num_layers,
                                                std::vector<double>(shape.num_q_heads, 0.0));
    if (!in.provided_importance.empty()) {
        if (static_cast<int>(in.provided_importance.size()) != shape.num_layers)
            throw ConfigError("provided importance must cover every layer");
        for (int l = 0; l < shape.num_layers; ++l) {
            if (static_cast<int>(in.provided_importance[l].size()) != shape.num_kv_heads)
                throw ConfigError("provided importance must cover every KV head");
            for (int g = 0; g < shape.num_kv_heads; ++g) {
                if (static_cast<int>(in.provided_importance[l][g].size()) != m)
                    throw ConfigError("provided importance width must equal the group size");
                for (int j = 0; j < m; ++j)
                    importance[l][shape.first_q_head(g) + j] = in.provided_importance[l][g][j];
            }
        }
    } else {
        int n_blend = std::min<int>(in.blend_sequences, static_cast<int>(in.sources.size()));
        for (int l = 0; l < shape.num_layers; ++l) {
            for (int h = 0; h < shape.num_q_heads; ++h) {
                int g = shape.kv_group_of(h);
                std::vector<BlendSample> samples;
                for (int i = 0; i < n_blend; ++i) {
                    const StepSource* src = in.sources[i];
                    if (in.topk > src->prompt_tokens())
                        throw ArgumentError("blend-fit top-k exceeds the probe prompt length");
                    const Matrix& keys = src->prompt_k(l, g);
                    const Matrix& values = src->prompt_v(l, g);
                    int t_end = std::min(in.blend_steps - 1, src->decode_steps());
                    for (int t = 0; t <= t_end; ++t) {
                        auto q = src->true_query(t, l, h);
                        BlendSample s;
                        s.full = full_attention(q, keys, values).values;
                        s.streaming = streaming_attention(q, keys, values, in.sink_tokens,
                                                          in.recent_tokens)
                                          .values;
                        std::vector<int> sel = topk_select_exact(q, keys, in.topk);
                        s.target = topk_attention(q, keys, values, sel).values;
                        samples.push_back(std::move(s));
                    }
                }
                importance[l][h] = fit_importance(samples).alpha;
            }
        }
    }

    HeadProfiles profiles(shape.num_layers);
    for (int l = 0; l < shape.num_layers; ++l) {
        profiles[l].resize(shape.num_kv_heads);
        for (int g = 0; g < shape.num_kv_heads; ++g) {
            HeadProfileEntry& e = profiles[l][g];
            e.q_importance.resize(m);
            std::vector<double> group_s_hat(m);
            for (int j = 0; j < m; ++j) {
                e.q_importance[j] = importance[l][shape.first_q_head(g) + j];
                group_s_hat[j] = s_hat[l][shape.first_q_head(g) + j];
            }
            e.kv_importance = kv_importance_of_group(e.q_importance);
            e.s_hat = kv_s_hat_of_group(group_s_hat);
            e.tau = compute_threshold(e.kv_importance, in.eta, in.p);
            e.difficulty = compute_difficulty(e.tau, e.s_hat, in.epsilon);
            e.placement = Placement::kOffloaded;
        }
    }
    return profiles;
}

HeadProfiles compute_profiles(const RunConfig& cfg) {
    cfg.validate();
    ProfilerInputs in;
    in.blend_steps = cfg.profiling.blend_steps;
    in.sink_tokens = cfg.attention.sink_tokens;
    in.recent_tokens = cfg.attention.recent_tokens;
    in.eta = cfg.thresholds.eta;
    in.p = cfg.thresholds.p;
    in.epsilon = cfg.thresholds.epsilon;
    if (!cfg.profiling.importance_path.empty())
        in.provided_importance = read_importance(cfg.profiling.importance_path);

    std::vector<std::unique_ptr<StepSource>> owned;
    if (!cfg.workload.trace_path.empty()) {
        owned.push_back(std::make_unique<TraceSource>(read_trace(cfg.workload.trace_path)));
        in.blend_sequences = 1;
        in.topk = std::max(1, static_cast<int>(std::ceil(cfg.attention.topk_ratio.front() *
                                                         owned.front()->prompt_tokens())));
    } else {
        SyntheticConfig sc;
        sc.shape = cfg.model;
        sc.d_model = cfg.workload.d_model;
        sc.n_prompt = cfg.profiling.n_prompt;
        sc.steps = cfg.profiling.steps;
        sc.sigma_step = cfg.profiling.sigma;
        sc.sigma_layer = cfg.profiling.sigma_layer;
        sc.hot_fraction = cfg.workload.hot_fraction;
        sc.hot_run_length = cfg.workload.hot_run_length;
        sc.hot_boost = cfg.workload.hot_boost;
        for (int i = 0; i < cfg.profiling.sequences; ++i) {
            sc.seed = mix_seed(cfg.profiling.seed, static_cast<uint64_t>(i));
            owned.push_back(std::make_unique<SyntheticModel>(sc));
        }
        in.blend_sequences = cfg.profiling.blend_sequences;
        in.topk = std::max(1, static_cast<int>(std::ceil(cfg.attention.topk_ratio.front() *
                                                         cfg.profiling.n_prompt)));
    }
    for (const auto& s : owned) in.sources.push_back(s.get());
    return profile_heads(in);
}

std::vector<std::vector<std::vector<double>>> read_importance(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open importance file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    ordered_json j;
    try {
        j = ordered_json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("importance file is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("q_importance"))
        throw ConfigError("importance file must be an object with a q_importance field");
    std::vector<std::vector<std::vector<double>>> out;
    try {
        j.at("q_importance").get_to(out);
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("q_importance must be a [layer][kv_head][group] number array");
    }
    for (const auto& layer : out)
        for (const auto& head : layer)
            for (double v : head)
                if (!(v >= 0.0 && v <= 1.0))
                    throw ConfigError("importance values must lie in [0, 1]");
    return out;
}

}  // namespace kvsim
