#pragma once

#include "dpcn/core/tensor.hpp"

namespace dpcn {

// Elementwise ops require identical shapes; there is no implicit broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> square(const Tensor<T>& a);

/// Sum of every element, as a (1) tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// (M, K) x (K, N) -> (M, N).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// New tensor with the same elements and a different shape.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Rows [begin, end) along axis 0.
template <typename T> Tensor<T> slice_batch(const Tensor<T>& a, std::size_t begin, std::size_t end);
/// Concatenation along axis 0; trailing extents must agree.
template <typename T> Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts);

/// Column `index` of an (N, C) tensor as (N, 1).
template <typename T> Tensor<T> select_column(const Tensor<T>& a, std::size_t index);

// Plain (non-recording) GEMM kernel used by the ops.
// C(M,N) = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
          const float* b, float beta, float* c);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c);

}  // namespace dpcn
