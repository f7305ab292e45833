#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvsim/matrix.hpp"
#include "kvsim/synthetic_model.hpp"

namespace kvsim {

// In-memory form of a recorded workload trace.
//
// Binary layout (little-endian):
//   magic "KVSIMTRC" (8 bytes), u32 version = 1,
//   u32 layers, num_q_heads, num_kv_heads, head_dim, n_prompt, n_steps,
//   element_width (4 = float32, 8 = float64),
// then row-major element blocks:
//   per layer, per KV head: prompt K rows (n_prompt x d_k), prompt V rows;
//   per step t = 0..n_steps: per layer one hidden block of h_q * d_k elements
//   (the concatenated per-head query vectors of that layer), and for t >= 1
//   per layer, per KV head, the new token's K row then V row (d_k each).
// A JSON sidecar at <path>.json mirrors the header for humans.
//
// Replay derives layer-l approximate queries by slicing the layer l-1 hidden
// block (layer 0 falls back to its own block, which persistent layer 0 never
// consumes).
struct TraceData {
    ModelShape shape;
    int n_prompt = 0;
    int n_steps = 0;
    int element_width = 8;

    std::vector<std::vector<Matrix>> prompt_k, prompt_v;        // [layer][kv_head]
    std::vector<std::vector<std::vector<double>>> hidden;       // [t][layer], h_q * d_k
    std::vector<std::vector<Matrix>> step_k, step_v;            // [t-1][layer], h_kv x d_k

    void validate() const;
};

void write_trace(const std::string& path, const TraceData& trace);
TraceData read_trace(const std::string& path);

// Snapshots a step source into a trace; hidden blocks are the concatenated
// true queries per layer.
TraceData record_trace(const StepSource& source, int element_width = 8);

class TraceSource : public StepSource {
  public:
    explicit TraceSource(TraceData data);

    const ModelShape& shape() const override { return data_.shape; }
    int prompt_tokens() const override { return data_.n_prompt; }
    int decode_steps() const override { return data_.n_steps; }
    const Matrix& prompt_k(int layer, int kv_head) const override;
    const Matrix& prompt_v(int layer, int kv_head) const override;
    std::span<const double> true_query(int t, int layer, int q_head) const override;
    std::span<const double> approx_query(int t, int layer, int q_head) const override;
    std::span<const double> new_k_row(int t, int layer, int kv_head) const override;
    std::span<const double> new_v_row(int t, int layer, int kv_head) const override;

  private:
    TraceData data_;
};

}  // namespace kvsim
