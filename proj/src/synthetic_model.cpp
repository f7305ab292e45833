#include "kvsim/synthetic_model.hpp"

#include <algorithm>
#include <cmath>

#include "kvsim/rng.hpp"

namespace kvsim {

namespace {

void normalize(std::span<double> v) {
    double nn = 0.0;
    for (double x : v) nn += x * x;
    if (nn == 0.0) throw NumericError("cannot normalize a zero vector");
    const double inv = 1.0 / std::sqrt(nn);
    for (double& x : v) x *= inv;
}

// x <- normalize(x + sigma * g). sigma 0 leaves x untouched so frozen-state
// controls stay bit-exact.
void walk(std::vector<double>& x, double sigma, std::mt19937_64& gen) {
    if (sigma == 0.0) return;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : x) v += sigma * dist(gen);
    normalize(x);
}

}  // namespace

std::vector<double> project_query(std::span<const double> x, const Matrix& w_q) {
    if (static_cast<int>(x.size()) != w_q.rows)
        throw ShapeError("hidden width does not match query weights");
    std::vector<double> q(w_q.cols, 0.0);
    for (int r = 0; r < w_q.rows; ++r) {
        const double xv = x[r];
        const double* wr = w_q.row(r);
        for (int c = 0; c < w_q.cols; ++c) q[c] += xv * wr[c];
    }
    return q;
}

SyntheticModel::SyntheticModel(const SyntheticConfig& cfg) : cfg_(cfg) {
    cfg_.shape.validate();
    if (cfg_.d_model <= 0) throw ConfigError("d_model must be positive");
    if (cfg_.n_prompt <= 0) throw ConfigError("n_prompt must be positive");
    if (cfg_.steps < 0) throw ConfigError("steps must be non-negative");
    if (cfg_.hot_fraction < 0.0 || cfg_.hot_fraction > 1.0)
        throw ConfigError("hot_fraction must lie in [0, 1]");
    if (cfg_.hot_run_length <= 0) throw ConfigError("hot_run_length must be positive");
    if (cfg_.hot_boost < 1.0) throw ConfigError("hot_boost must be at least 1");
    if (!(cfg_.sigma_step >= 0.0) || !(cfg_.sigma_layer >= 0.0))
        throw ConfigError("drift sigmas must be non-negative");

    const ModelShape& sh = cfg_.shape;
    const int L = sh.num_layers, hq = sh.num_q_heads, hkv = sh.num_kv_heads, dk = sh.head_dim;

    wq_.reserve(static_cast<size_t>(L) * hq);
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < hq; ++h) {
            const int src_layer = cfg_.tie_layer_weights ? 0 : l;
            if (cfg_.tie_layer_weights && l > 0) {
                wq_.push_back(wq_[static_cast<size_t>(src_layer) * hq + h]);
                continue;
            }
            Matrix w(cfg_.d_model, dk);
            std::mt19937_64 gen(mix_seed(cfg_.seed, 101, static_cast<uint64_t>(l) * hq + h));
            fill_normal(gen, w.data);
            wq_.push_back(std::move(w));
        }
    for (int l = 0; l < L; ++l)
        for (int g = 0; g < hkv; ++g) {
            Matrix wk(cfg_.d_model, dk), wv(cfg_.d_model, dk);
            std::mt19937_64 gk(mix_seed(cfg_.seed, 102, static_cast<uint64_t>(l) * hkv + g));
            std::mt19937_64 gv(mix_seed(cfg_.seed, 103, static_cast<uint64_t>(l) * hkv + g));
            fill_normal(gk, wk.data);
            fill_normal(gv, wv.data);
            wk_.push_back(std::move(wk));
            wv_.push_back(std::move(wv));
        }

    // Hot runs: one run per equal prompt segment at a seeded offset, so runs
    // never overlap and spread across the prompt.
    const int hot_tokens = static_cast<int>(std::llround(cfg_.hot_fraction * cfg_.n_prompt));
    const int n_runs = std::max(hot_tokens / cfg_.hot_run_length, 0);
    std::vector<char> is_hot(cfg_.n_prompt, 0);
    if (n_runs > 0) {
        std::mt19937_64 gen(mix_seed(cfg_.seed, 104));
        const int segment = cfg_.n_prompt / n_runs;
        for (int r = 0; r < n_runs; ++r) {
            const int max_off = std::max(segment - cfg_.hot_run_length, 0);
            std::uniform_int_distribution<int> dist(0, max_off);
            const int start = r * segment + dist(gen);
            hot_starts_.push_back(start);
            for (int j = start; j < std::min(start + cfg_.hot_run_length, cfg_.n_prompt); ++j)
                is_hot[j] = 1;
        }
    }
    // Per-head boost strength in [0, 1]; heads with weak boosts end up less
    // dependent on off-window tokens, which is what importance profiling sees.
    std::vector<double> head_strength(static_cast<size_t>(L) * hkv);
    {
        std::mt19937_64 gen(mix_seed(cfg_.seed, 105));
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        for (double& s : head_strength) s = dist(gen);
    }

    // One continuous position walk covers prompt tokens and decode steps:
    // position p holds token p; decode step t sits at position n_prompt-1+t.
    const int positions = cfg_.n_prompt + cfg_.steps;
    std::mt19937_64 step_gen(mix_seed(cfg_.seed, 106));
    std::mt19937_64 layer_gen(mix_seed(cfg_.seed, 107));
    std::vector<double> x0(cfg_.d_model);
    fill_normal(step_gen, x0);
    normalize(x0);

    prompt_k_.assign(L, std::vector<Matrix>());
    prompt_v_.assign(L, std::vector<Matrix>());
    for (int l = 0; l < L; ++l)
        for (int g = 0; g < hkv; ++g) {
            prompt_k_[l].emplace_back(0, dk);
            prompt_v_[l].emplace_back(0, dk);
        }
    true_q_.assign(static_cast<size_t>(cfg_.steps + 1) * L, Matrix());
    approx_q_.assign(static_cast<size_t>(cfg_.steps + 1) * L, Matrix());
    step_k_.assign(static_cast<size_t>(std::max(cfg_.steps, 0)) * L, Matrix());
    step_v_.assign(static_cast<size_t>(std::max(cfg_.steps, 0)) * L, Matrix());

    std::vector<std::vector<double>> x_layers(L);
    for (int p = 0; p < positions; ++p) {
        if (p > 0) walk(x0, cfg_.sigma_step, step_gen);
        x_layers[0] = x0;
        for (int l = 1; l < L; ++l) {
            x_layers[l] = x_layers[l - 1];
            walk(x_layers[l], cfg_.sigma_layer, layer_gen);
        }

        const bool prompt_token = p < cfg_.n_prompt;
        const int t = p - (cfg_.n_prompt - 1);  // decode step index, valid when >= 0
        for (int l = 0; l < L; ++l) {
            if (prompt_token || t >= 1) {
                // This position contributes KV rows: prompt tokens during
                // prefill, the current token during decode.
                for (int g = 0; g < hkv; ++g) {
                    std::vector<double> krow = project_query(x_layers[l], wk_[static_cast<size_t>(l) * hkv + g]);
                    std::vector<double> vrow = project_query(x_layers[l], wv_[static_cast<size_t>(l) * hkv + g]);
                    if (prompt_token && is_hot[p]) {
                        const double scale =
                            1.0 + (cfg_.hot_boost - 1.0) * head_strength[static_cast<size_t>(l) * hkv + g];
                        for (double& v : krow) v *= scale;
                    }
                    if (prompt_token) {
                        prompt_k_[l][g].append_row(krow);
                        prompt_v_[l][g].append_row(vrow);
                    } else {
                        Matrix& sk = step_k_[kv_index(t, l)];
                        Matrix& sv = step_v_[kv_index(t, l)];
                        if (sk.rows == 0) {
                            sk = Matrix(0, dk);
                            sv = Matrix(0, dk);
                        }
                        sk.append_row(krow);
                        sv.append_row(vrow);
                    }
                }
            }
            if (t >= 0) {
                Matrix tq(0, dk), aq(0, dk);
                for (int h = 0; h < hq; ++h) {
                    tq.append_row(project_query(x_layers[l], wq_[static_cast<size_t>(l) * hq + h]));
                    const std::vector<double>& x_prev = l > 0 ? x_layers[l - 1] : x_layers[0];
                    aq.append_row(project_query(x_prev, wq_[static_cast<size_t>(l) * hq + h]));
                }
                true_q_[q_index(t, l)] = std::move(tq);
                approx_q_[q_index(t, l)] = std::move(aq);
            }
        }
    }
}

const Matrix& SyntheticModel::prompt_k(int layer, int kv_head) const {
    return prompt_k_.at(layer).at(kv_head);
}

const Matrix& SyntheticModel::prompt_v(int layer, int kv_head) const {
    return prompt_v_.at(layer).at(kv_head);
}

std::span<const double> SyntheticModel::true_query(int t, int layer, int q_head) const {
    return true_q_.at(q_index(t, layer)).row_span(q_head);
}

std::span<const double> SyntheticModel::approx_query(int t, int layer, int q_head) const {
    return approx_q_.at(q_index(t, layer)).row_span(q_head);
}

std::span<const double> SyntheticModel::new_k_row(int t, int layer, int kv_head) const {
    if (t < 1) throw ArgumentError("new KV rows exist only for decode steps");
    return step_k_.at(kv_index(t, layer)).row_span(kv_head);
}

std::span<const double> SyntheticModel::new_v_row(int t, int layer, int kv_head) const {
    if (t < 1) throw ArgumentError("new KV rows exist only for decode steps");
    return step_v_.at(kv_index(t, layer)).row_span(kv_head);
}

const Matrix& SyntheticModel::w_q(int layer, int q_head) const {
    return wq_.at(static_cast<size_t>(layer) * cfg_.shape.num_q_heads + q_head);
}

}  // namespace kvsim
