#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dpcn/core/tensor.hpp"
#include "dpcn/nn/functional.hpp"

namespace dpcn::models {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Non-trainable state (batch-norm running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<NamedTensor<T>>& /*out*/) {}
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<NamedBuffer<T>>& /*out*/) {}
  virtual void set_training(bool /*training*/) {}
  /// Train-mode batch norm keeps normalising with batch statistics but stops
  /// updating its running statistics.
  virtual void set_stats_frozen(bool /*frozen*/) {}
  virtual std::string kind() const = 0;
};

/// Kaiming-normal fan-in initialisation, std = sqrt(2 / fan_in).
template <typename T>
void kaiming_normal(Tensor<T>& weights, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(nn::ConvSpec spec, bool bias, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  std::string kind() const override { return "conv2d"; }
  const nn::ConvSpec& spec() const { return spec_; }
  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }

 private:
  nn::ConvSpec spec_;
  Tensor<T> weights_;
  Tensor<T> bias_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels);
  /// Batch norm followed by leaky ReLU with the given slope, computed fused.
  BatchNorm(std::size_t channels, T activation_slope);
  Tensor<T> forward(const Tensor<T>& x) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) override;
  void set_training(bool training) override;
  void set_stats_frozen(bool frozen) override { state_.update_running_stats = !frozen; }
  std::string kind() const override { return fused_ ? "batch_norm_act" : "batch_norm"; }
  nn::BatchNormState<T>& state() { return state_; }

 private:
  nn::BatchNormState<T> state_;
  bool fused_ = false;
  T slope_ = T(0);
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(T alpha) : alpha_(alpha) {}
  Tensor<T> forward(const Tensor<T>& x) override { return nn::leaky_relu(x, alpha_); }
  std::string kind() const override { return alpha_ == T(0) ? "relu" : "leaky_relu"; }

 private:
  T alpha_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override { return nn::sigmoid(x); }
  std::string kind() const override { return "sigmoid"; }
};

template <typename T>
class Pool final : public Layer<T> {
 public:
  Pool(nn::PoolKind pool_kind, std::size_t window, std::size_t stride)
      : pool_kind_(pool_kind), window_(window), stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x) override { return nn::pool(x, pool_kind_, window_, stride_); }
  std::string kind() const override { return pool_kind_ == nn::PoolKind::kMax ? "max_pool" : "avg_pool"; }

 private:
  nn::PoolKind pool_kind_;
  std::size_t window_, stride_;
};

/// (N, C, H, W) -> (N, C).
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override { return nn::global_avg_pool(x); }
  std::string kind() const override { return "global_avg_pool"; }
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  std::string kind() const override { return "linear"; }
  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weights_;  // (in, out)
  Tensor<T> bias_;
};

/// Basic two-convolution residual block with a projection shortcut when the
/// channel count or stride changes.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) override;
  void set_training(bool training) override;
  void set_stats_frozen(bool frozen) override;
  std::string kind() const override { return "residual_block"; }
  /// Makes the residual branch output exactly zero.
  void zero_residual_branch();

 private:
  Conv2d<T> conv1_, conv2_;
  BatchNorm<T> bn1_, bn2_;
  std::unique_ptr<Conv2d<T>> shortcut_conv_;
  std::unique_ptr<BatchNorm<T>> shortcut_bn_;
};

/// Ordered, named layer list. Counts how many times it has been run so
/// callers can prove a sub-module was (not) evaluated.
template <typename T>
class Sequential {
 public:
  void add(std::string name, std::unique_ptr<Layer<T>> layer);
  Tensor<T> forward(const Tensor<T>& x);
  /// Runs layers [begin, end) without touching the evaluation counter.
  Tensor<T> forward_range(const Tensor<T>& x, std::size_t begin, std::size_t end) const;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const std::string& name(std::size_t i) const { return layers_.at(i).first; }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i).second; }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i).second; }
  /// Index of the layer called `name`, or size() when absent.
  std::size_t find(const std::string& name) const;

  std::vector<NamedTensor<T>> parameters(const std::string& prefix = "") const;
  std::vector<NamedBuffer<T>> buffers(const std::string& prefix = "") const;
  void set_training(bool training);
  void set_stats_frozen(bool frozen);

  std::size_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }
  void count_evaluation() { ++evaluations_; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
  std::size_t evaluations_ = 0;
};

}  // namespace dpcn::models
