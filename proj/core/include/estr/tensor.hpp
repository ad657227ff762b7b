#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "estr/error.hpp"

namespace estr {

// Dense row-major float32 matrix. Everything in the library is rank <= 2;
// scalars are 1x1 and row vectors are 1xN. Accumulations inside ops happen in
// double for stability, storage is always 32-bit.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {
    if (r < 0 || c < 0) throw ShapeError("Tensor: negative dimension");
  }
  Tensor(int r, int c, std::vector<float> d) : rows(r), cols(c), data(std::move(d)) {
    if (static_cast<std::size_t>(r) * c != data.size())
      throw ShapeError("Tensor: data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(r, c));
  }

  static Tensor scalar(float v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }
  static Tensor full(int r, int c, float v) {
    Tensor t(r, c);
    for (auto& x : t.data) x = v;
    return t;
  }

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  const float* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  float* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return shape_str(rows, cols); }

  static std::string shape_str(int r, int c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
  }
};

// Set of active row indices, sorted and unique. Used by the gradient detach
// op to mark which rows keep their backward path alive.
struct RowMask {
  std::vector<int> rows;  // sorted, unique

  RowMask() = default;
  explicit RowMask(std::vector<int> r);

  static RowMask all(int n);
  bool contains(int r) const;
  int count() const { return static_cast<int>(rows.size()); }
  bool covers_all(int n) const { return count() == n; }
  void validate(int n_rows) const;
};

}  // namespace estr
