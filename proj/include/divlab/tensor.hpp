#pragma once

#include <cassert>
#include <span>
#include <vector>

namespace divlab {

/// Dense row-major matrix. Vectors are 1 x n matrices.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T(0))
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

/// (batch, time, width) grid stored contiguously.
template <typename T>
struct Tensor3 {
  int batch = 0;
  int time = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int b, int t, int w) : batch(b), time(t), width(w), data(static_cast<std::size_t>(b) * t * w, T(0)) {}

  T& at(int b, int t, int w) { return data[(static_cast<std::size_t>(b) * time + t) * width + w]; }
  T at(int b, int t, int w) const { return data[(static_cast<std::size_t>(b) * time + t) * width + w]; }
  std::span<const T> vec(int b, int t) const {
    return {data.data() + (static_cast<std::size_t>(b) * time + t) * width, static_cast<std::size_t>(width)};
  }
  std::span<T> vec(int b, int t) {
    return {data.data() + (static_cast<std::size_t>(b) * time + t) * width, static_cast<std::size_t>(width)};
  }
};

}  // namespace divlab
