#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dpcn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node;

// Storage behind a Tensor handle. Shape never changes after construction.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool retain_grad = false;  // keep an intermediate's grad after backward
  std::shared_ptr<Node<T>> creator;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// One recorded operation. `backward` receives the gradient of the op's
// output and accumulates into whichever inputs require grad.
template <typename T>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const std::vector<T>& grad_out)> backward;
};

}  // namespace detail

/// Returns true while operations are being recorded for backward.
bool grad_enabled();

/// Disables graph recording for its lifetime (thread local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reference-counted handle to an N-dimensional row-major array.
///
/// Copies of a Tensor alias the same storage. Operations in ops.hpp and
/// nn/functional.hpp build a define-by-run graph whenever an input
/// requires grad and grad mode is enabled; `backward()` walks that graph in
/// reverse topological order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return impl_ ? impl_->data.size() : 0; }

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  /// Intermediate (non-leaf) gradients are released once propagated unless
  /// this is called before backward().
  void retain_grad() const { impl_->retain_grad = true; }
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// True when this tensor was produced by a recorded operation.
  bool has_creator() const { return impl_ && impl_->creator != nullptr; }

  /// Copy of the values with no graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Reverse-mode sweep from a single-element tensor (seed 1).
  void backward() const;
  /// Reverse-mode sweep seeded with an explicit output gradient.
  void backward(std::span<const T> seed) const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Builds the output of a differentiable op. When recording is active and
/// any input requires grad, attaches `backward` as the creator node.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::string& op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const std::vector<T>&)> backward);

/// Accumulate `delta` into the grad of `t` (allocating it on first use).
template <typename T>
void accumulate_grad(const Tensor<T>& t, std::span<const T> delta);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dpcn
