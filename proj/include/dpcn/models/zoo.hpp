#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dpcn/models/network.hpp"

namespace dpcn::models {

/// NIN-style backbone: three conv + mlpconv blocks (channel plan
/// (96, 192, 192) scaled by `width_multiplier`; kernels 5, 3, 3), 2x2 max
/// pooling after blocks 1 and 2. The classifier is a 1x1 conv to `num_classes` followed by
/// global average pooling. Tap point: end of block3.
template <typename T>
Network<T> build_small_nin(std::size_t num_classes, double width_multiplier, std::uint64_t seed,
                           std::size_t input_channels = 3);

/// ResNet-style backbone: 3x3 stem and three residual stages of
/// (16, 32, 64) channels, `depth_blocks` blocks each, stride 2 between
/// stages. Classifier: global average pool + linear. Tap point: block3.
template <typename T>
Network<T> build_small_resnet(std::size_t depth_blocks, std::size_t num_classes, std::uint64_t seed,
                              std::size_t input_channels = 3);

struct DiscriminatorPlan {
  std::vector<std::size_t> channels{64, 128, 256};
  double leaky_slope = 0.2;
};

/// Up to three stride-2 conv + batch norm + leaky ReLU stages (fewer when
/// the feature map is small; at least one), global average pool, linear to
/// one score, optional sigmoid.
template <typename T>
Discriminator<T> build_discriminator(std::size_t in_channels, std::size_t in_spatial, bool final_sigmoid,
                                     std::uint64_t seed, const DiscriminatorPlan& plan = {});

/// Copy of `templ`'s classifier recipe at `fused_channels` input width. NIN
/// heads gain a trailing fully connected layer.
template <typename T>
ExtraClassifier<T> build_extra_classifier(const Network<T>& templ, std::size_t fused_channels,
                                          std::size_t num_classes, std::uint64_t seed);

/// Number of stride-2 discriminator stages used for a given input extent.
std::size_t discriminator_stage_count(std::size_t in_spatial, std::size_t max_stages = 3);

}  // namespace dpcn::models
