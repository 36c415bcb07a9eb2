#pragma once

// Dense kernels used by the transformer. The top-level namespace holds the
// OpenMP versions; kernels::ref holds the plain serial loops they are tested
// and benchmarked against. Both produce bit-identical results: each output
// element is accumulated by a single thread in the same order.

#include <span>

namespace divlab::kernels {

/// Work (m*n*k multiply-adds) below which kernels stay single-threaded.
inline constexpr long kParallelWork = 1L << 16;

/// C[m x n] = A[m x k] * B[k x n]  (accumulate adds into C instead).
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate = false);

/// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n);

/// C[m x n] = A[m x k] * B[n x k]^T  (accumulate adds into C instead).
template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
                 bool accumulate = false);

/// Row-wise softmax in place with max subtraction.
template <typename T>
void softmax_rows(std::span<T> x, int rows, int cols);

/// Row-wise layer normalisation: y = (x - mean) / sqrt(var + eps). Writes the
/// normalised rows to y and the per-row inverse std to inv_std.
template <typename T>
void normalize_rows(std::span<const T> x, std::span<T> y, std::span<T> inv_std, int rows, int cols,
                    T eps);

namespace ref {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate = false);
template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n);
template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
                 bool accumulate = false);
template <typename T>
void softmax_rows(std::span<T> x, int rows, int cols);
template <typename T>
void normalize_rows(std::span<const T> x, std::span<T> y, std::span<T> inv_std, int rows, int cols,
                    T eps);

}  // namespace ref
}  // namespace divlab::kernels
