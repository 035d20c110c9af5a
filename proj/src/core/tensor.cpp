#include "dpcn/core/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dpcn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  for (auto extent : shape) {
    if (extent == 0) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
  }
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
  validate_shape(shape);
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->data.assign(dpcn::numel(shape), fill);
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  validate_shape(shape);
  if (dpcn::numel(shape) != values.size()) {
    throw std::invalid_argument("shape " + to_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw std::logic_error("shape() on an undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

template <typename T>
std::span<T> Tensor<T>::data() {
  return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a single-element tensor, got " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (value && !impl_->creator) impl_->ensure_grad();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return impl_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  const T one = T(1);
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  if (seed.size() != numel()) throw std::invalid_argument("backward seed size does not match output");
  using Impl = detail::TensorImpl<T>;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* creator = node->creator.get();
    if (creator && next < creator->inputs.size()) {
      Impl* child = creator->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  auto& root_grad = impl_->ensure_grad();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (!node->creator || node->grad.empty()) continue;
    node->creator->backward(node->grad);
    if (!node->retain_grad && node != impl_.get()) std::vector<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::string& op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const std::vector<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(values), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  auto node = std::make_shared<detail::Node<T>>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->creator = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template <typename T>
void accumulate_grad(const Tensor<T>& t, std::span<const T> delta) {
  auto& g = t.impl()->ensure_grad();
  if (g.size() != delta.size()) throw std::logic_error("gradient size mismatch in accumulate_grad");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, const std::string&, std::vector<Tensor<float>>,
                                   std::function<void(const std::vector<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const std::string&, std::vector<Tensor<double>>,
                                    std::function<void(const std::vector<double>&)>);
template void accumulate_grad(const Tensor<float>&, std::span<const float>);
template void accumulate_grad(const Tensor<double>&, std::span<const double>);

}  // namespace dpcn
