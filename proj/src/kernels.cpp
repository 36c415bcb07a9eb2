#include "divlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace divlab::kernels {

namespace {
inline std::size_t at(int r, int c, int stride) {
  return static_cast<std::size_t>(r) * stride + c;
}
}  // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate) {
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (int i = 0; i < m; ++i) {
    T* crow = c.data() + at(i, 0, n);
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a.data() + at(i, 0, k);
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b.data() + at(p, 0, n);
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n) {
  const long work = static_cast<long>(m) * k * n;
  // Parallel over output rows (columns of A); the i-loop order is kept serial
  // per row so results match the reference bit for bit.
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (int p = 0; p < k; ++p) {
    T* crow = c.data() + at(p, 0, n);
    for (int i = 0; i < m; ++i) {
      const T aip = a[at(i, p, k)];
      if (aip == T(0)) continue;
      const T* brow = b.data() + at(i, 0, n);
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
                 bool accumulate) {
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (int i = 0; i < m; ++i) {
    const T* arow = a.data() + at(i, 0, k);
    T* crow = c.data() + at(i, 0, n);
    for (int j = 0; j < n; ++j) {
      const T* brow = b.data() + at(j, 0, k);
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

template <typename T>
void softmax_rows(std::span<T> x, int rows, int cols) {
  const long work = static_cast<long>(rows) * cols * 16;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (int r = 0; r < rows; ++r) {
    T* row = x.data() + at(r, 0, cols);
    const T mx = *std::max_element(row, row + cols);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

template <typename T>
void normalize_rows(std::span<const T> x, std::span<T> y, std::span<T> inv_std, int rows, int cols,
                    T eps) {
  const long work = static_cast<long>(rows) * cols * 16;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.data() + at(r, 0, cols);
    T* yr = y.data() + at(r, 0, cols);
    T mean = T(0);
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * is;
  }
}

namespace ref {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!accumulate) c[at(i, j, n)] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      for (int j = 0; j < n; ++j) c[at(i, j, n)] += a[at(i, p, k)] * b[at(p, j, n)];
    }
  }
}

template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    for (int i = 0; i < m; ++i) {
      if (a[at(i, p, k)] == T(0)) continue;
      for (int j = 0; j < n; ++j) c[at(p, j, n)] += a[at(i, p, k)] * b[at(i, j, n)];
    }
  }
}

template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += a[at(i, p, k)] * b[at(j, p, k)];
      c[at(i, j, n)] = accumulate ? c[at(i, j, n)] + acc : acc;
    }
  }
}

template <typename T>
void softmax_rows(std::span<T> x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T mx = x[at(r, 0, cols)];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[at(r, j, cols)]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      x[at(r, j, cols)] = std::exp(x[at(r, j, cols)] - mx);
      sum += x[at(r, j, cols)];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) x[at(r, j, cols)] *= inv;
  }
}

template <typename T>
void normalize_rows(std::span<const T> x, std::span<T> y, std::span<T> inv_std, int rows, int cols,
                    T eps) {
  for (int r = 0; r < rows; ++r) {
    T mean = T(0);
    for (int j = 0; j < cols; ++j) mean += x[at(r, j, cols)];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) {
      const T d = x[at(r, j, cols)] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) y[at(r, j, cols)] = (x[at(r, j, cols)] - mean) * inv_std[r];
  }
}

}  // namespace ref

#define DIVLAB_INSTANTIATE_KERNELS(NS, T)                                                          \
  template void NS::matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, \
                              bool);                                                               \
  template void NS::matmul_at_b<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, \
                                   int);                                                           \
  template void NS::matmul_a_bt<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, \
                                   int, bool);                                                     \
  template void NS::softmax_rows<T>(std::span<T>, int, int);                                       \
  template void NS::normalize_rows<T>(std::span<const T>, std::span<T>, std::span<T>, int, int, T);

}  // namespace divlab::kernels

DIVLAB_INSTANTIATE_KERNELS(divlab::kernels, float)
DIVLAB_INSTANTIATE_KERNELS(divlab::kernels, double)
DIVLAB_INSTANTIATE_KERNELS(divlab::kernels::ref, float)
DIVLAB_INSTANTIATE_KERNELS(divlab::kernels::ref, double)
