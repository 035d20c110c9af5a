#pragma once

#include <cstddef>
#include <vector>

#include "dpcn/core/tensor.hpp"

namespace dpcn::nn {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// floor((in + 2 padding - kernel) / stride) + 1; throws when not positive.
  std::size_t output_extent(std::size_t in, std::size_t kernel) const;
};

/// Cross-correlation over an NCHW input with weights (out, in, kh, kw) and an
/// optional bias (out). An undefined bias means no bias term.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, const ConvSpec& spec);

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T alpha);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

enum class BatchNormMode { kTrain, kEval };

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;  // (C), trainable
  Tensor<T> beta;   // (C), trainable
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  BatchNormMode mode = BatchNormMode::kTrain;
  /// When false, train mode still normalises with batch statistics but the
  /// running statistics are left untouched.
  bool update_running_stats = true;

  static BatchNormState create(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

/// Per-channel normalisation of an NCHW (or NC) tensor.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state);

/// leaky_relu(batch_norm(x, state), alpha) as a single pass; identical
/// semantics (including running-statistic updates) with less memory traffic.
template <typename T>
Tensor<T> batch_norm_leaky_relu(const Tensor<T>& x, BatchNormState<T>& state, T alpha);

enum class PoolKind { kMax, kAvg, kGlobalAvg };

/// Window pooling on NCHW. kGlobalAvg ignores window/stride and yields
/// (N, C, 1, 1). Max pool routes gradient to the first maximal element.
template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind, std::size_t window = 2, std::size_t stride = 2);

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);
/// (N, ...) -> (N, prod(...)).
template <typename T> Tensor<T> flatten(const Tensor<T>& x);

/// x (N, F) * W (F, C) + b (C).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);

/// Batch mean of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

/// Row-wise softmax without graph recording.
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits);

/// (1/N) sum_i (target - d_out_i)^2 for discriminator scores of shape (N, 1).
template <typename T>
Tensor<T> disc_l2_loss(const Tensor<T>& d_out, T target);

/// Channel concatenation of NCHW tensors sharing N, H, W.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
/// Channels [begin, end) of an NCHW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// Elementwise sum of identically shaped tensors.
template <typename T>
Tensor<T> sum_features(const std::vector<Tensor<T>>& parts);

}  // namespace dpcn::nn
