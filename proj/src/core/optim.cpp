#include "dpcn/core/optim.hpp"

#include <stdexcept>
#include <string>

namespace dpcn {

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& options) {
  if (!(options.learning_rate >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be nonnegative");
  if (velocity.size() != param.size() || (!grad.empty() && grad.size() != param.size())) {
    throw std::invalid_argument("sgd_step: shape mismatch (param " + std::to_string(param.size()) + ", grad " +
                                std::to_string(grad.size()) + ", velocity " + std::to_string(velocity.size()) + ")");
  }
  const T lr = static_cast<T>(options.learning_rate);
  const T momentum = static_cast<T>(options.momentum);
  const T decay = static_cast<T>(options.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    velocity[i] = momentum * velocity[i] + (g + decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, SgdOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0.0)) throw std::invalid_argument("Sgd: learning rate must be positive");
  if (options_.momentum < 0.0 || options_.momentum >= 1.0) throw std::invalid_argument("Sgd: momentum must be in [0,1)");
  if (options_.weight_decay < 0.0) throw std::invalid_argument("Sgd: weight decay must be nonnegative");
  velocities_.reserve(params_.size());
  for (const auto& p : params_) velocities_.emplace_back(p.numel(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    sgd_step<T>(p.data(), p.grad(), velocities_[i], options_);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Sgd<T>::set_learning_rate(double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("Sgd: learning rate must be nonnegative");
  options_.learning_rate = lr;
}

double step_decay_lr(double base_lr, std::size_t epoch, std::size_t total_epochs, std::span<const double> milestones,
                     double factor) {
  static constexpr double kDefault[] = {0.5, 0.75};
  if (milestones.empty()) milestones = kDefault;
  double lr = base_lr;
  for (double m : milestones) {
    if (static_cast<double>(epoch) >= m * static_cast<double>(total_epochs)) lr *= factor;
  }
  return lr;
}

template void sgd_step(std::span<float>, std::span<const float>, std::span<float>, const SgdOptions&);
template void sgd_step(std::span<double>, std::span<const double>, std::span<double>, const SgdOptions&);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace dpcn
