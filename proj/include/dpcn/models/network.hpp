#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpcn/models/layers.hpp"

namespace dpcn::models {

/// How a backbone turns extractor features into logits; the extra
/// classifier is rebuilt from the same recipe at fused width.
enum class HeadKind {
  kNin,         // 1x1 conv to classes, global average pool
  kPoolLinear,  // global average pool, fully connected
};

template <typename T>
struct ExtractorOutput {
  Tensor<T> tap;       // feeds the discriminator
  Tensor<T> features;  // full extractor output, feeds the classifier and fusion
};

/// A single backbone split into an extractor and a classifier.
///
/// Extractor layers are grouped into named stages (`block1`, `block2`, ...);
/// the tap point is the end of one stage. Parameters are reported under the
/// `extractor.` and `classifier.` prefixes, which partition the full set.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Sequential<T>& extractor() { return extractor_; }
  const Sequential<T>& extractor() const { return extractor_; }
  Sequential<T>& classifier() { return classifier_; }
  const Sequential<T>& classifier() const { return classifier_; }

  ExtractorOutput<T> extract(const Tensor<T>& x);
  Tensor<T> classify(const Tensor<T>& features) { return classifier_.forward(features); }
  Tensor<T> forward(const Tensor<T>& x) { return classify(extract(x).features); }
  /// Runs every layer as one undivided list (no split, no counters).
  Tensor<T> forward_undivided(const Tensor<T>& x) const;

  /// Forward pass that also returns the activation after the layer or stage
  /// called `target`. Throws when no such layer exists.
  std::pair<Tensor<T>, Tensor<T>> forward_capture(const Tensor<T>& x, const std::string& target);

  void mark_stage(const std::string& name);  // end of stage = last added extractor layer
  const std::vector<std::pair<std::string, std::size_t>>& stages() const { return stages_; }
  void set_tap_stage(const std::string& stage);
  const std::string& tap_stage() const { return tap_stage_; }
  std::size_t tap_index() const { return tap_index_; }
  /// Extractor layer index for a stage or layer name; throws when unknown.
  std::size_t resolve_layer(const std::string& target) const;

  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedTensor<T>> extractor_parameters() const { return extractor_.parameters("extractor."); }
  std::vector<NamedTensor<T>> classifier_parameters() const { return classifier_.parameters("classifier."); }
  std::vector<NamedBuffer<T>> buffers() const;
  void set_training(bool training);

  HeadKind head_kind() const { return head_; }
  void set_head_kind(HeadKind head) { head_ = head; }
  std::size_t num_classes() const { return num_classes_; }
  void set_num_classes(std::size_t n) { num_classes_ = n; }
  std::size_t feature_channels() const { return feature_channels_; }
  void set_feature_channels(std::size_t c) { feature_channels_ = c; }

 private:
  Sequential<T> extractor_;
  Sequential<T> classifier_;
  std::vector<std::pair<std::string, std::size_t>> stages_;
  std::string tap_stage_;
  std::size_t tap_index_ = 0;
  HeadKind head_ = HeadKind::kPoolLinear;
  std::size_t num_classes_ = 0;
  std::size_t feature_channels_ = 0;
};

/// Convolutional scorer emitting one value per sample, shape (N, 1).
template <typename T>
class Discriminator {
 public:
  Sequential<T>& layers() { return layers_; }
  const Sequential<T>& layers() const { return layers_; }
  Tensor<T> forward(const Tensor<T>& features) { return layers_.forward(features); }
  std::vector<NamedTensor<T>> parameters() const { return layers_.parameters("discriminator."); }
  std::vector<NamedBuffer<T>> buffers() const { return layers_.buffers("discriminator."); }
  void set_training(bool training) { layers_.set_training(training); }
  bool final_sigmoid() const { return final_sigmoid_; }
  void set_final_sigmoid(bool v) { final_sigmoid_ = v; }
  std::size_t stage_count() const { return stage_count_; }
  void set_stage_count(std::size_t n) { stage_count_ = n; }
  std::size_t evaluations() const { return layers_.evaluations(); }

 private:
  Sequential<T> layers_;
  bool final_sigmoid_ = false;
  std::size_t stage_count_ = 0;
};

/// Inference head over fused extractor features.
template <typename T>
class ExtraClassifier {
 public:
  Sequential<T>& layers() { return layers_; }
  const Sequential<T>& layers() const { return layers_; }
  Tensor<T> forward(const Tensor<T>& fused) { return layers_.forward(fused); }
  std::vector<NamedTensor<T>> parameters() const { return layers_.parameters("extra."); }
  std::vector<NamedBuffer<T>> buffers() const { return layers_.buffers("extra."); }
  void set_training(bool training) { layers_.set_training(training); }
  std::size_t input_channels() const { return input_channels_; }
  void set_input_channels(std::size_t c) { input_channels_ = c; }

 private:
  Sequential<T> layers_;
  std::size_t input_channels_ = 0;
};

/// Flat parameter vector, concatenated in registry order.
template <typename T>
std::vector<T> flatten_parameters(const std::vector<NamedTensor<T>>& params);
/// Flat copy of buffer contents.
template <typename T>
std::vector<T> flatten_buffers(const std::vector<NamedBuffer<T>>& buffers);

}  // namespace dpcn::models
