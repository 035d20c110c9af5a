#include "dpcn/models/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "dpcn/core/ops.hpp"

namespace dpcn::models {

template <typename T>
void kaiming_normal(Tensor<T>& weights, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& w : weights.data()) w = static_cast<T>(dist(rng));
}

template <typename T>
Conv2d<T>::Conv2d(nn::ConvSpec spec, bool bias, std::mt19937_64& rng) : spec_(spec) {
  weights_ = Tensor<T>(Shape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w}, T(0), true);
  kaiming_normal(weights_, spec.in_channels * spec.kernel_h * spec.kernel_w, rng);
  if (bias) bias_ = Tensor<T>(Shape{spec.out_channels}, T(0), true);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  return nn::conv2d(x, weights_, bias_, spec_);
}

template <typename T>
void Conv2d<T>::collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + "weight", weights_});
  if (bias_.defined()) out.push_back({prefix + "bias", bias_});
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels) : state_(nn::BatchNormState<T>::create(channels)) {}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, T activation_slope)
    : state_(nn::BatchNormState<T>::create(channels)), fused_(true), slope_(activation_slope) {}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x) {
  return fused_ ? nn::batch_norm_leaky_relu(x, state_, slope_) : nn::batch_norm(x, state_);
}

template <typename T>
void BatchNorm<T>::collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + "gamma", state_.gamma});
  out.push_back({prefix + "beta", state_.beta});
}

template <typename T>
void BatchNorm<T>::collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
  out.push_back({prefix + "running_mean", &state_.running_mean});
  out.push_back({prefix + "running_var", &state_.running_var});
}

template <typename T>
void BatchNorm<T>::set_training(bool training) {
  state_.mode = training ? nn::BatchNormMode::kTrain : nn::BatchNormMode::kEval;
}

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng) {
  weights_ = Tensor<T>(Shape{in_features, out_features}, T(0), true);
  kaiming_normal(weights_, in_features, rng);
  bias_ = Tensor<T>(Shape{out_features}, T(0), true);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  return nn::linear(x.rank() == 2 ? x : nn::flatten(x), weights_, bias_);
}

template <typename T>
void Linear<T>::collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + "weight", weights_});
  out.push_back({prefix + "bias", bias_});
}

namespace {
nn::ConvSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride) {
  return nn::ConvSpec{in, out, 3, 3, stride, 1};
}
}  // namespace

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                std::mt19937_64& rng)
    : conv1_(conv3x3(in_channels, out_channels, stride), false, rng),
      conv2_(conv3x3(out_channels, out_channels, 1), false, rng),
      bn1_(out_channels, T(0)),
      bn2_(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    shortcut_conv_ = std::make_unique<Conv2d<T>>(nn::ConvSpec{in_channels, out_channels, 1, 1, stride, 0}, false, rng);
    shortcut_bn_ = std::make_unique<BatchNorm<T>>(out_channels);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = bn1_.forward(conv1_.forward(x));
  h = bn2_.forward(conv2_.forward(h));
  Tensor<T> skip = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x)) : x;
  return nn::relu(add(h, skip));
}

template <typename T>
void ResidualBlock<T>::collect_parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  conv1_.collect_parameters(prefix + "conv1.", out);
  bn1_.collect_parameters(prefix + "bn1.", out);
  conv2_.collect_parameters(prefix + "conv2.", out);
  bn2_.collect_parameters(prefix + "bn2.", out);
  if (shortcut_conv_) {
    shortcut_conv_->collect_parameters(prefix + "shortcut.conv.", out);
    shortcut_bn_->collect_parameters(prefix + "shortcut.bn.", out);
  }
}

template <typename T>
void ResidualBlock<T>::collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
  bn1_.collect_buffers(prefix + "bn1.", out);
  bn2_.collect_buffers(prefix + "bn2.", out);
  if (shortcut_bn_) shortcut_bn_->collect_buffers(prefix + "shortcut.bn.", out);
}

template <typename T>
void ResidualBlock<T>::set_training(bool training) {
  bn1_.set_training(training);
  bn2_.set_training(training);
  if (shortcut_bn_) shortcut_bn_->set_training(training);
}

template <typename T>
void ResidualBlock<T>::set_stats_frozen(bool frozen) {
  bn1_.set_stats_frozen(frozen);
  bn2_.set_stats_frozen(frozen);
  if (shortcut_bn_) shortcut_bn_->set_stats_frozen(frozen);
}

template <typename T>
void ResidualBlock<T>::zero_residual_branch() {
  for (auto& v : bn2_.state().gamma.data()) v = T(0);
  for (auto& v : bn2_.state().beta.data()) v = T(0);
}

template <typename T>
void Sequential<T>::add(std::string name, std::unique_ptr<Layer<T>> layer) {
  if (find(name) != layers_.size()) throw std::invalid_argument("duplicate layer name " + name);
  layers_.emplace_back(std::move(name), std::move(layer));
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  ++evaluations_;
  return forward_range(x, 0, layers_.size());
}

template <typename T>
Tensor<T> Sequential<T>::forward_range(const Tensor<T>& x, std::size_t begin, std::size_t end) const {
  if (begin > end || end > layers_.size()) throw std::out_of_range("Sequential::forward_range");
  Tensor<T> h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i].second->forward(h);
  return h;
}

template <typename T>
std::size_t Sequential<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].first == name) return i;
  }
  return layers_.size();
}

template <typename T>
std::vector<NamedTensor<T>> Sequential<T>::parameters(const std::string& prefix) const {
  std::vector<NamedTensor<T>> out;
  for (const auto& [name, layer] : layers_) layer->collect_parameters(prefix + name + ".", out);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Sequential<T>::buffers(const std::string& prefix) const {
  std::vector<NamedBuffer<T>> out;
  for (const auto& [name, layer] : layers_) layer->collect_buffers(prefix + name + ".", out);
  return out;
}

template <typename T>
void Sequential<T>::set_training(bool training) {
  for (auto& entry : layers_) entry.second->set_training(training);
}

template <typename T>
void Sequential<T>::set_stats_frozen(bool frozen) {
  for (auto& entry : layers_) entry.second->set_stats_frozen(frozen);
}

#define DPCN_INSTANTIATE(T)                                                           \
  template void kaiming_normal(Tensor<T>&, std::size_t, std::mt19937_64&);            \
  template class Conv2d<T>;                                                           \
  template class BatchNorm<T>;                                                        \
  template class Linear<T>;                                                           \
  template class ResidualBlock<T>;                                                    \
  template class Sequential<T>;

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::models
