#pragma once

#include <span>
#include <vector>

#include "dpcn/core/tensor.hpp"

namespace dpcn {

struct SgdOptions {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// One SGD-with-momentum update on a flat parameter array:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
/// An empty `grad` is read as all zeros.
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& options);

/// Momentum SGD over a fixed parameter list. Velocity buffers are created
/// zeroed, one per parameter, with identical lengths.
template <typename T>
class Sgd {
 public:
  Sgd() = default;
  Sgd(std::vector<Tensor<T>> params, SgdOptions options);

  void step();
  void zero_grad();

  double learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(double lr);
  const SgdOptions& options() const { return options_; }

  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<std::vector<T>>& velocities() { return velocities_; }
  const std::vector<std::vector<T>>& velocities() const { return velocities_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocities_;
  SgdOptions options_;
};

/// Step-decay schedule: base_lr, multiplied by `factor` once each listed
/// fraction of `total_epochs` has elapsed.
double step_decay_lr(double base_lr, std::size_t epoch, std::size_t total_epochs,
                     std::span<const double> milestones = {}, double factor = 0.1);

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace dpcn
