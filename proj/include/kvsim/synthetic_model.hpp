#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvsim/matrix.hpp"

namespace kvsim {

// Supplies the decode workflow with prompt KV, per-step queries (true and
// approximate) and per-step new-token KV rows. Implemented by the synthetic
// model and by trace replay. Step t = 0 is the prefill-initialization step
// (queries only); steps 1..decode_steps() each carry queries plus one new
// token's KV rows.
class StepSource {
  public:
    virtual ~StepSource() = default;
    virtual const ModelShape& shape() const = 0;
    virtual int prompt_tokens() const = 0;
    virtual int decode_steps() const = 0;
    virtual const Matrix& prompt_k(int layer, int kv_head) const = 0;
    virtual const Matrix& prompt_v(int layer, int kv_head) const = 0;
    virtual std::span<const double> true_query(int t, int layer, int q_head) const = 0;
    virtual std::span<const double> approx_query(int t, int layer, int q_head) const = 0;
    virtual std::span<const double> new_k_row(int t, int layer, int kv_head) const = 0;
    virtual std::span<const double> new_v_row(int t, int layer, int kv_head) const = 0;
};

// The approximate-query projection: the previous layer's hidden state pushed
// through the next layer's query weights.
std::vector<double> project_query(std::span<const double> x, const Matrix& w_q);

struct SyntheticConfig {
    ModelShape shape;
    int d_model = 256;
    int n_prompt = 0;
    int steps = 0;
    double sigma_step = 0.02;   // hidden-state drift per token position
    double sigma_layer = 0.01;  // drift across layers within one position
    // Prompt keys on seeded contiguous runs get a norm boost, concentrating
    // top-k mass positionally the way real attention mass concentrates.
    // Boost strength varies per KV head so head importance varies.
    double hot_fraction = 0.125;
    int hot_run_length = 64;
    double hot_boost = 1.8;
    // Share one W_Q across layers (with zero inter-layer drift this makes the
    // approximate query equal the true query; used by replay-equality tests).
    bool tie_layer_weights = false;
    uint64_t seed = 1;
};

// Deterministic CPU workload generator. Hidden states follow the normalized
// drift walk x_next = normalize(x + sigma * g) along token positions, with a
// second normalized walk across layers at each position. Keys/values are
// per-head linear projections of the per-layer hidden state of their token;
// queries at step t are projections of the current token's hidden state, and
// the approximate query for layer l uses the layer l-1 hidden state with
// layer l's weights. Everything is precomputed at construction.
class SyntheticModel : public StepSource {
  public:
    explicit SyntheticModel(const SyntheticConfig& cfg);

    const ModelShape& shape() const override { return cfg_.shape; }
    int prompt_tokens() const override { return cfg_.n_prompt; }
    int decode_steps() const override { return cfg_.steps; }
    const Matrix& prompt_k(int layer, int kv_head) const override;
    const Matrix& prompt_v(int layer, int kv_head) const override;
    std::span<const double> true_query(int t, int layer, int q_head) const override;
    std::span<const double> approx_query(int t, int layer, int q_head) const override;
    std::span<const double> new_k_row(int t, int layer, int kv_head) const override;
    std::span<const double> new_v_row(int t, int layer, int kv_head) const override;

    const SyntheticConfig& config() const { return cfg_; }
    const Matrix& w_q(int layer, int q_head) const;
    // Hot run start positions chosen for the prompt (token indices).
    const std::vector<int>& hot_run_starts() const { return hot_starts_; }

  private:
    int q_index(int t, int layer) const { return t * cfg_.shape.num_layers + layer; }
    int kv_index(int t, int layer) const { return (t - 1) * cfg_.shape.num_layers + layer; }

    SyntheticConfig cfg_;
    std::vector<Matrix> wq_;                  // [layer * h_q + h], d_model x d_k
    std::vector<Matrix> wk_, wv_;             // [layer * h_kv + g], d_model x d_k
    std::vector<int> hot_starts_;
    std::vector<std::vector<Matrix>> prompt_k_, prompt_v_;  // [layer][kv_head]
    std::vector<Matrix> true_q_, approx_q_;   // [q_index(t, layer)], h_q x d_k
    std::vector<Matrix> step_k_, step_v_;     // [kv_index(t, layer)], h_kv x d_k
};

}  // namespace kvsim
