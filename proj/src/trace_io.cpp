#include "kvsim/trace_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace kvsim {

namespace {

constexpr char kMagic[8] = {'K', 'V', 'S', 'I', 'M', 'T', 'R', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_elements(std::ofstream& out, const std::vector<double>& values, int width) {
    if (width == 8) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        std::vector<float> tmp(values.begin(), values.end());
        out.write(reinterpret_cast<const char*>(tmp.data()),
                  static_cast<std::streamsize>(tmp.size() * sizeof(float)));
    }
}

std::vector<double> read_elements(std::ifstream& in, size_t count, int width) {
    std::vector<double> values(count);
    if (width == 8) {
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
    } else {
        std::vector<float> tmp(count);
        in.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        for (size_t i = 0; i < count; ++i) values[i] = tmp[i];
    }
    if (!in) throw IoError("trace file truncated");
    return values;
}

}  // namespace

void TraceData::validate() const {
    shape.validate();
    if (n_prompt <= 0) throw ConfigError("trace must hold a non-empty prompt");
    if (n_steps < 0) throw ConfigError("trace step count must be non-negative");
    if (element_width != 4 && element_width != 8)
        throw ConfigError("trace element_width must be 4 or 8");
    const size_t L = static_cast<size_t>(shape.num_layers);
    if (prompt_k.size() != L || prompt_v.size() != L)
        throw ShapeError("trace prompt layer count mismatch");
    if (hidden.size() != static_cast<size_t>(n_steps) + 1)
        throw ShapeError("trace hidden block count mismatch");
    if (step_k.size() != static_cast<size_t>(n_steps) ||
        step_v.size() != static_cast<size_t>(n_steps))
        throw ShapeError("trace step KV count mismatch");
    for (size_t l = 0; l < L; ++l) {
        if (prompt_k[l].size() != static_cast<size_t>(shape.num_kv_heads))
            throw ShapeError("trace prompt head count mismatch");
        for (const Matrix& m : prompt_k[l])
            if (m.rows != n_prompt || m.cols != shape.head_dim)
                throw ShapeError("trace prompt K shape mismatch");
    }
    for (const auto& step : hidden) {
        if (step.size() != L) throw ShapeError("trace hidden layer count mismatch");
        for (const auto& block : step)
            if (block.size() !=
                static_cast<size_t>(shape.num_q_heads) * shape.head_dim)
                throw ShapeError("trace hidden block width mismatch");
    }
}

void write_trace(const std::string& path, const TraceData& trace) {
    trace.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open trace file for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    for (uint32_t v :
         {static_cast<uint32_t>(trace.shape.num_layers), static_cast<uint32_t>(trace.shape.num_q_heads),
          static_cast<uint32_t>(trace.shape.num_kv_heads), static_cast<uint32_t>(trace.shape.head_dim),
          static_cast<uint32_t>(trace.n_prompt), static_cast<uint32_t>(trace.n_steps),
          static_cast<uint32_t>(trace.element_width)})
        write_u32(out, v);

    for (int l = 0; l < trace.shape.num_layers; ++l)
        for (int g = 0; g < trace.shape.num_kv_heads; ++g) {
            write_elements(out, trace.prompt_k[l][g].data, trace.element_width);
            write_elements(out, trace.prompt_v[l][g].data, trace.element_width);
        }
    for (int t = 0; t <= trace.n_steps; ++t) {
        for (int l = 0; l < trace.shape.num_layers; ++l)
            write_elements(out, trace.hidden[t][l], trace.element_width);
        if (t >= 1)
            for (int l = 0; l < trace.shape.num_layers; ++l) {
                write_elements(out, trace.step_k[t - 1][l].data, trace.element_width);
                write_elements(out, trace.step_v[t - 1][l].data, trace.element_width);
            }
    }
    if (!out) throw IoError("failed writing trace file: " + path);

    nlohmann::ordered_json sidecar;
    sidecar["format"] = "kvsim-trace";
    sidecar["version"] = kVersion;
    sidecar["layers"] = trace.shape.num_layers;
    sidecar["num_q_heads"] = trace.shape.num_q_heads;
    sidecar["num_kv_heads"] = trace.shape.num_kv_heads;
    sidecar["head_dim"] = trace.shape.head_dim;
    sidecar["n_prompt"] = trace.n_prompt;
    sidecar["n_steps"] = trace.n_steps;
    sidecar["element_width"] = trace.element_width;
    sidecar["hidden_block"] = "concatenated per-head query vectors per layer and step";
    std::ofstream side(path + ".json", std::ios::binary);
    if (!side) throw IoError("cannot open trace sidecar for writing: " + path + ".json");
    side << sidecar.dump(2) << "\n";
}

TraceData read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trace file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a trace file: " + path);
    if (read_u32(in) != kVersion) throw IoError("unsupported trace version");

    TraceData trace;
    trace.shape.num_layers = static_cast<int>(read_u32(in));
    trace.shape.num_q_heads = static_cast<int>(read_u32(in));
    trace.shape.num_kv_heads = static_cast<int>(read_u32(in));
    trace.shape.head_dim = static_cast<int>(read_u32(in));
    trace.n_prompt = static_cast<int>(read_u32(in));
    trace.n_steps = static_cast<int>(read_u32(in));
    trace.element_width = static_cast<int>(read_u32(in));
    if (!in) throw IoError("trace file truncated");
    if (trace.element_width != 4 && trace.element_width != 8)
        throw IoError("trace element_width must be 4 or 8");

    const int L = trace.shape.num_layers, hkv = trace.shape.num_kv_heads;
    const int dk = trace.shape.head_dim, hq = trace.shape.num_q_heads;
    trace.prompt_k.assign(L, {});
    trace.prompt_v.assign(L, {});
    for (int l = 0; l < L; ++l)
        for (int g = 0; g < hkv; ++g) {
            Matrix k(trace.n_prompt, dk), v(trace.n_prompt, dk);
            k.data = read_elements(in, k.data.size(), trace.element_width);
            v.data = read_elements(in, v.data.size(), trace.element_width);
            trace.prompt_k[l].push_back(std::move(k));
            trace.prompt_v[l].push_back(std::move(v));
        }
    trace.hidden.resize(trace.n_steps + 1);
    trace.step_k.resize(trace.n_steps);
    trace.step_v.resize(trace.n_steps);
    for (int t = 0; t <= trace.n_steps; ++t) {
        trace.hidden[t].resize(L);
        for (int l = 0; l < L; ++l)
            trace.hidden[t][l] =
                read_elements(in, static_cast<size_t>(hq) * dk, trace.element_width);
        if (t >= 1) {
            trace.step_k[t - 1].resize(L);
            trace.step_v[t - 1].resize(L);
            for (int l = 0; l < L; ++l) {
                Matrix k(hkv, dk), v(hkv, dk);
                k.data = read_elements(in, k.data.size(), trace.element_width);
                v.data = read_elements(in, v.data.size(), trace.element_width);
                trace.step_k[t - 1][l] = std::move(k);
                trace.step_v[t - 1][l] = std::move(v);
            }
        }
    }
    in.peek();
    if (!in.eof()) throw IoError("trailing bytes after trace payload");
    trace.validate();
    return trace;
}

TraceData record_trace(const StepSource& source, int element_width) {
    TraceData trace;
    trace.shape = source.shape();
    trace.n_prompt = source.prompt_tokens();
    trace.n_steps = source.decode_steps();
    trace.element_width = element_width;
    const int L = trace.shape.num_layers, hkv = trace.shape.num_kv_heads;
    const int hq = trace.shape.num_q_heads, dk = trace.shape.head_dim;

    trace.prompt_k.assign(L, {});
    trace.prompt_v.assign(L, {});
    for (int l = 0; l < L; ++l)
        for (int g = 0; g < hkv; ++g) {
            trace.prompt_k[l].push_back(source.prompt_k(l, g));
            trace.prompt_v[l].push_back(source.prompt_v(l, g));
        }
    trace.hidden.resize(trace.n_steps + 1);
    trace.step_k.resize(trace.n_steps);
    trace.step_v.resize(trace.n_steps);
    for (int t = 0; t <= trace.n_steps; ++t) {
        trace.hidden[t].resize(L);
        for (int l = 0; l < L; ++l) {
            std::vector<double>& block = trace.hidden[t][l];
            block.reserve(static_cast<size_t>(hq) * dk);
            for (int h = 0; h < hq; ++h) {
                auto q = source.true_query(t, l, h);
                block.insert(block.end(), q.begin(), q.end());
            }
        }
        if (t >= 1) {
            trace.step_k[t - 1].resize(L);
            trace.step_v[t - 1].resize(L);
            for (int l = 0; l < L; ++l) {
                Matrix k(0, dk), v(0, dk);
                for (int g = 0; g < hkv; ++g) {
                    k.append_row(source.new_k_row(t, l, g));
                    v.append_row(source.new_v_row(t, l, g));
                }
                trace.step_k[t - 1][l] = std::move(k);
                trace.step_v[t - 1][l] = std::move(v);
            }
        }
    }
    return trace;
}

TraceSource::TraceSource(TraceData data) : data_(std::move(data)) { data_.validate(); }

const Matrix& TraceSource::prompt_k(int layer, int kv_head) const {
    return data_.prompt_k.at(layer).at(kv_head);
}

const Matrix& TraceSource::prompt_v(int layer, int kv_head) const {
    return data_.prompt_v.at(layer).at(kv_head);
}

std::span<const double> TraceSource::true_query(int t, int layer, int q_head) const {
    const auto& block = data_.hidden.at(t).at(layer);
    return {block.data() + static_cast<size_t>(q_head) * data_.shape.head_dim,
            static_cast<size_t>(data_.shape.head_dim)};
}

std::span<const double> TraceSource::approx_query(int t, int layer, int q_head) const {
    const int src = layer > 0 ? layer - 1 : 0;
    const auto& block = data_.hidden.at(t).at(src);
    return {block.data() + static_cast<size_t>(q_head) * data_.shape.head_dim,
            static_cast<size_t>(data_.shape.head_dim)};
}

std::span<const double> TraceSource::new_k_row(int t, int layer, int kv_head) const {
    if (t < 1) throw ArgumentError("new KV rows exist only for decode steps");
    return data_.step_k.at(t - 1).at(layer).row_span(kv_head);
}

std::span<const double> TraceSource::new_v_row(int t, int layer, int kv_head) const {
    if (t < 1) throw ArgumentError("new KV rows exist only for decode steps");
    return data_.step_v.at(t - 1).at(layer).row_span(kv_head);
}

}  // namespace kvsim
