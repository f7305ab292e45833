#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvsim/errors.hpp"

namespace kvsim {

// Dense row-major matrix of doubles. Rows are tokens, columns are feature
// dimensions. Storage is always double regardless of the modeled element
// width; modeled byte counts use ModelShape::bytes_per_element instead.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw ShapeError("matrix dimensions must be non-negative");
    }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    std::span<const double> row_span(int r) const {
        if (r < 0 || r >= rows) throw IndexError("matrix row out of range");
        return {row(r), static_cast<size_t>(cols)};
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    void append_row(std::span<const double> values) {
        if (cols == 0 && rows == 0) cols = static_cast<int>(values.size());
        if (static_cast<int>(values.size()) != cols)
            throw ShapeError("appended row width does not match matrix");
        data.insert(data.end(), values.begin(), values.end());
        ++rows;
    }
};

// Model geometry shared by every module. h_q query heads share h_kv KV heads;
// query head h belongs to KV group h / group_size().
struct ModelShape {
    int num_layers = 0;
    int num_q_heads = 0;
    int num_kv_heads = 0;
    int head_dim = 128;
    int bytes_per_element = 2;

    int group_size() const { return num_q_heads / num_kv_heads; }
    int kv_group_of(int q_head) const { return q_head / group_size(); }
    int first_q_head(int kv_head) const { return kv_head * group_size(); }

    void validate() const {
        if (num_layers <= 0) throw ConfigError("num_layers must be positive");
        if (num_q_heads <= 0 || num_kv_heads <= 0)
            throw ConfigError("head counts must be positive");
        if (num_q_heads % num_kv_heads != 0)
            throw ConfigError("num_q_heads must be a multiple of num_kv_heads");
        if (head_dim <= 0) throw ConfigError("head_dim must be positive");
        if (bytes_per_element <= 0) throw ConfigError("bytes_per_element must be positive");
    }
};

}  // namespace kvsim
