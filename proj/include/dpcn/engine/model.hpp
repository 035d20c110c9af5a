#pragma once

#include <vector>

#include "dpcn/engine/config.hpp"
#include "dpcn/engine/losses.hpp"
#include "dpcn/models/network.hpp"

namespace dpcn::engine {

/// The n subnetworks, the discriminator and the extra classifier. All are
/// built up front from their seeds; the extra classifier is only used from
/// Step 3 on.
template <typename T>
struct DpcnModel {
  std::vector<models::Network<T>> nets;
  models::Discriminator<T> disc;
  models::ExtraClassifier<T> extra;
  std::size_t num_classes = 0;

  /// Every parameter under `subnet<i>.`, `discriminator.` and `extra.`.
  std::vector<models::NamedTensor<T>> parameters() const;
  std::vector<models::NamedBuffer<T>> buffers() const;
  std::vector<Tensor<T>> subnet_parameters(std::size_t i) const;
};

/// Channel count and spatial extent of the tap activation for a backbone
/// on `image_size` inputs.
struct TapGeometry {
  std::size_t channels = 0;
  std::size_t spatial = 0;
  std::size_t feature_channels = 0;
};

template <typename T>
models::Network<T> build_backbone(const DpcnConfig& config, std::size_t num_classes, std::uint64_t seed,
                                  std::size_t input_channels);

template <typename T>
DpcnModel<T> build_model(const DpcnConfig& config, std::size_t num_classes, std::size_t input_channels,
                         std::size_t image_size);

template <typename T>
TapGeometry tap_geometry(models::Network<T>& net, std::size_t input_channels, std::size_t image_size);

template <typename T>
struct SubnetForward {
  std::vector<models::ExtractorOutput<T>> outputs;
  std::vector<Tensor<T>> logits;
};

/// One extractor and classifier pass per subnetwork.
template <typename T>
SubnetForward<T> forward_subnets(DpcnModel<T>& model, const Tensor<T>& x);

/// Discriminator in its current mode applied to each subnetwork's tap
/// separately. Entries listed in `skip` are left undefined.
template <typename T>
std::vector<Tensor<T>> score_taps(DpcnModel<T>& model, const SubnetForward<T>& f, std::size_t skip_below = 0);

/// Step-2 sub-step (a) scores: one discriminator pass over the batch
/// concatenation of all taps, split back per subnetwork. With `detach` the
/// taps are cut from the subnetwork graphs.
template <typename T>
std::vector<Tensor<T>> score_taps_joint(DpcnModel<T>& model, const SubnetForward<T>& f, bool detach);

/// Requires-grad on or off for a whole parameter list.
template <typename T>
void set_trainable(const std::vector<models::NamedTensor<T>>& params, bool trainable);

}  // namespace dpcn::engine
