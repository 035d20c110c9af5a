#include "dpcn/core/ops.hpp"

#include <Eigen/Core>

#include <stdexcept>

namespace dpcn {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

}  // namespace

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
               const T* b, T beta, T* c) {
  using Map = Eigen::Map<const RowMajor<T>>;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMajor<T>> out(c, M, N);
  if (beta == T(0)) {
    out.setZero();
  } else if (beta != T(1)) {
    out *= beta;
  }
  Map lhs(a, trans_a ? K : M, trans_a ? M : K);
  Map rhs(b, trans_b ? N : K, trans_b ? K : N);
  if (trans_a && trans_b) {
    out.noalias() += alpha * lhs.transpose() * rhs.transpose();
  } else if (trans_a) {
    out.noalias() += alpha * lhs.transpose() * rhs;
  } else if (trans_b) {
    out.noalias() += alpha * lhs * rhs.transpose();
  } else {
    out.noalias() += alpha * lhs * rhs;
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
          const float* b, float beta, float* c) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a, b}, [a, b](const std::vector<T>& g) {
    if (a.requires_grad()) accumulate_grad<T>(a, g);
    if (b.requires_grad()) accumulate_grad<T>(b, g);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(a.shape(), std::move(out), "sub", {a, b}, [a, b](const std::vector<T>& g) {
    if (a.requires_grad()) accumulate_grad<T>(a, g);
    if (b.requires_grad()) {
      std::vector<T> neg(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      accumulate_grad<T>(b, neg);
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b}, [a, b](const std::vector<T>& g) {
    auto x = a.data(), y = b.data();
    std::vector<T> d(g.size());
    if (a.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * y[i];
      accumulate_grad<T>(a, d);
    }
    if (b.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * x[i];
      accumulate_grad<T>(b, d);
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a}, [a, factor](const std::vector<T>& g) {
    std::vector<T> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * factor;
    accumulate_grad<T>(a, d);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return make_result<T>(a.shape(), std::move(out), "add_scalar", {a},
                        [a](const std::vector<T>& g) { accumulate_grad<T>(a, g); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return make_result<T>(a.shape(), std::move(out), "square", {a}, [a](const std::vector<T>& g) {
    auto x = a.data();
    std::vector<T> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = T(2) * x[i] * g[i];
    accumulate_grad<T>(a, d);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{1}, {total}, "sum", {a}, [a](const std::vector<T>& g) {
    std::vector<T> d(a.numel(), g[0]);
    accumulate_grad<T>(a, d);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0), out.data());
  return make_result<T>(Shape{m, n}, std::move(out), "matmul", {a, b}, [a, b, m, n, k](const std::vector<T>& g) {
    if (a.requires_grad()) {
      std::vector<T> da(m * k, T(0));
      gemm(false, true, m, k, n, T(1), g.data(), b.data().data(), T(0), da.data());
      accumulate_grad<T>(a, da);
    }
    if (b.requires_grad()) {
      std::vector<T> db(k * n, T(0));
      gemm(true, false, k, n, m, T(1), a.data().data(), g.data(), T(0), db.data());
      accumulate_grad<T>(b, db);
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {a},
                        [a](const std::vector<T>& g) { accumulate_grad<T>(a, g); });
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.dim(0)) throw std::invalid_argument("slice_batch: bad range");
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<T> out(a.data().begin() + begin * row, a.data().begin() + end * row);
  return make_result<T>(std::move(shape), std::move(out), "slice_batch", {a},
                        [a, begin, row](const std::vector<T>& g) {
                          auto& dst = a.impl()->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) dst[begin * row + i] += g[i];
                        });
}

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape tail_a(p.shape().begin() + 1, p.shape().end());
    Shape tail_b(shape.begin() + 1, shape.end());
    if (tail_a != tail_b) throw std::invalid_argument("concat_batch: trailing shapes differ");
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>(std::move(shape), std::move(out), "concat_batch", parts, [parts](const std::vector<T>& g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) accumulate_grad<T>(p, std::span<const T>(g.data() + offset, p.numel()));
      offset += p.numel();
    }
  });
}

template <typename T>
Tensor<T> select_column(const Tensor<T>& a, std::size_t index) {
  if (a.rank() != 2 || index >= a.dim(1)) throw std::invalid_argument("select_column: index out of range");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = a.data()[r * cols + index];
  return make_result<T>(Shape{rows, 1}, std::move(out), "select_column", {a},
                        [a, index, rows, cols](const std::vector<T>& g) {
                          auto& dst = a.impl()->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) dst[r * cols + index] += g[r];
                        });
}

#define DPCN_INSTANTIATE(T)                                                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> slice_batch(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> concat_batch(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> select_column(const Tensor<T>&, std::size_t);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn
