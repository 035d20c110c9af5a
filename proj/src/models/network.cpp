#include "dpcn/models/network.hpp"

#include <stdexcept>

namespace dpcn::models {

template <typename T>
ExtractorOutput<T> Network<T>::extract(const Tensor<T>& x) {
  extractor_.count_evaluation();
  ExtractorOutput<T> out;
  out.tap = extractor_.forward_range(x, 0, tap_index_ + 1);
  out.features = tap_index_ + 1 == extractor_.size()
                     ? out.tap
                     : extractor_.forward_range(out.tap, tap_index_ + 1, extractor_.size());
  return out;
}

template <typename T>
Tensor<T> Network<T>::forward_undivided(const Tensor<T>& x) const {
  Tensor<T> h = extractor_.forward_range(x, 0, extractor_.size());
  return classifier_.forward_range(h, 0, classifier_.size());
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Network<T>::forward_capture(const Tensor<T>& x, const std::string& target) {
  const std::size_t index = resolve_layer(target);
  Tensor<T> activation = extractor_.forward_range(x, 0, index + 1);
  Tensor<T> features = extractor_.forward_range(activation, index + 1, extractor_.size());
  return {classify(features), activation};
}

template <typename T>
void Network<T>::mark_stage(const std::string& name) {
  if (extractor_.empty()) throw std::logic_error("mark_stage before any extractor layer");
  stages_.emplace_back(name, extractor_.size() - 1);
}

template <typename T>
void Network<T>::set_tap_stage(const std::string& stage) {
  for (const auto& [name, index] : stages_) {
    if (name == stage) {
      tap_stage_ = stage;
      tap_index_ = index;
      return;
    }
  }
  throw std::invalid_argument("unknown tap stage '" + stage + "'");
}

template <typename T>
std::size_t Network<T>::resolve_layer(const std::string& target) const {
  for (const auto& [name, index] : stages_) {
    if (name == target) return index;
  }
  const std::size_t i = extractor_.find(target);
  if (i == extractor_.size()) throw std::invalid_argument("target layer '" + target + "' not found");
  return i;
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::parameters() const {
  auto all = extractor_parameters();
  auto head = classifier_parameters();
  all.insert(all.end(), head.begin(), head.end());
  return all;
}

template <typename T>
std::vector<NamedBuffer<T>> Network<T>::buffers() const {
  auto all = extractor_.buffers("extractor.");
  auto head = classifier_.buffers("classifier.");
  all.insert(all.end(), head.begin(), head.end());
  return all;
}

template <typename T>
void Network<T>::set_training(bool training) {
  extractor_.set_training(training);
  classifier_.set_training(training);
}

template <typename T>
std::vector<T> flatten_parameters(const std::vector<NamedTensor<T>>& params) {
  std::vector<T> flat;
  for (const auto& p : params) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
  return flat;
}

template <typename T>
std::vector<T> flatten_buffers(const std::vector<NamedBuffer<T>>& buffers) {
  std::vector<T> flat;
  for (const auto& b : buffers) flat.insert(flat.end(), b.values->begin(), b.values->end());
  return flat;
}

#define DPCN_INSTANTIATE(T)                                                            \
  template class Network<T>;                                                           \
  template std::vector<T> flatten_parameters(const std::vector<NamedTensor<T>>&);      \
  template std::vector<T> flatten_buffers(const std::vector<NamedBuffer<T>>&);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::models
