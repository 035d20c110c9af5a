#include "dpcn/models/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace dpcn::models {

namespace {

template <typename T>
void add_conv_bn_act(Sequential<T>& seq, const std::string& prefix, nn::ConvSpec spec, T slope,
                     std::mt19937_64& rng) {
  seq.add(prefix + "conv", std::make_unique<Conv2d<T>>(spec, false, rng));
  seq.add(prefix + "bn_act", std::make_unique<BatchNorm<T>>(spec.out_channels, slope));
}

std::size_t scaled(std::size_t base, double multiplier) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * multiplier)));
}

}  // namespace

template <typename T>
Network<T> build_small_nin(std::size_t num_classes, double width_multiplier, std::uint64_t seed,
                           std::size_t input_channels) {
  if (num_classes < 2) throw std::invalid_argument("build_small_nin: need at least two classes");
  if (!(width_multiplier > 0.0)) throw std::invalid_argument("build_small_nin: width multiplier must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t c1 = scaled(96, width_multiplier);
  const std::size_t c2 = scaled(192, width_multiplier);
  const std::size_t c3 = scaled(192, width_multiplier);

  Network<T> net;
  auto& ex = net.extractor();
  add_conv_bn_act<T>(ex, "block1.0.", {input_channels, c1, 5, 5, 1, 2}, T(0), rng);
  add_conv_bn_act<T>(ex, "block1.1.", {c1, c1, 1, 1, 1, 0}, T(0), rng);
  add_conv_bn_act<T>(ex, "block1.2.", {c1, c1, 1, 1, 1, 0}, T(0), rng);
  ex.add("block1.pool", std::make_unique<Pool<T>>(nn::PoolKind::kMax, 2, 2));
  net.mark_stage("block1");
  add_conv_bn_act<T>(ex, "block2.0.", {c1, c2, 3, 3, 1, 1}, T(0), rng);
  add_conv_bn_act<T>(ex, "block2.1.", {c2, c2, 1, 1, 1, 0}, T(0), rng);
  add_conv_bn_act<T>(ex, "block2.2.", {c2, c2, 1, 1, 1, 0}, T(0), rng);
  ex.add("block2.pool", std::make_unique<Pool<T>>(nn::PoolKind::kMax, 2, 2));
  net.mark_stage("block2");
  add_conv_bn_act<T>(ex, "block3.0.", {c2, c3, 3, 3, 1, 1}, T(0), rng);
  add_conv_bn_act<T>(ex, "block3.1.", {c3, c3, 1, 1, 1, 0}, T(0), rng);
  add_conv_bn_act<T>(ex, "block3.2.", {c3, c3, 1, 1, 1, 0}, T(0), rng);
  net.mark_stage("block3");
  net.set_tap_stage("block3");

  auto& head = net.classifier();
  head.add("conv", std::make_unique<Conv2d<T>>(nn::ConvSpec{c3, num_classes, 1, 1, 1, 0}, true, rng));
  head.add("pool", std::make_unique<GlobalAvgPool<T>>());
  net.set_head_kind(HeadKind::kNin);
  net.set_num_classes(num_classes);
  net.set_feature_channels(c3);
  return net;
}

template <typename T>
Network<T> build_small_resnet(std::size_t depth_blocks, std::size_t num_classes, std::uint64_t seed,
                              std::size_t input_channels) {
  if (depth_blocks < 1) throw std::invalid_argument("build_small_resnet: need at least one block per stage");
  if (num_classes < 2) throw std::invalid_argument("build_small_resnet: need at least two classes");
  std::mt19937_64 rng(seed);
  constexpr std::array<std::size_t, 3> widths{16, 32, 64};

  Network<T> net;
  auto& ex = net.extractor();
  add_conv_bn_act<T>(ex, "stem.", {input_channels, widths[0], 3, 3, 1, 1}, T(0), rng);
  std::size_t in = widths[0];
  for (std::size_t stage = 0; stage < widths.size(); ++stage) {
    const std::string name = "block" + std::to_string(stage + 1);
    for (std::size_t b = 0; b < depth_blocks; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      ex.add(name + "." + std::to_string(b), std::make_unique<ResidualBlock<T>>(in, widths[stage], stride, rng));
      in = widths[stage];
    }
    net.mark_stage(name);
  }
  net.set_tap_stage("block3");

  auto& head = net.classifier();
  head.add("pool", std::make_unique<GlobalAvgPool<T>>());
  head.add("fc", std::make_unique<Linear<T>>(in, num_classes, rng));
  net.set_head_kind(HeadKind::kPoolLinear);
  net.set_num_classes(num_classes);
  net.set_feature_channels(in);
  return net;
}

std::size_t discriminator_stage_count(std::size_t in_spatial, std::size_t max_stages) {
  if (in_spatial == 0) throw std::invalid_argument("discriminator: spatial extent must be positive");
  std::size_t stages = 0;
  for (std::size_t s = in_spatial; s >= 2 && stages < max_stages; s = (s + 1) / 2) ++stages;
  return std::max<std::size_t>(1, stages);
}

template <typename T>
Discriminator<T> build_discriminator(std::size_t in_channels, std::size_t in_spatial, bool final_sigmoid,
                                     std::uint64_t seed, const DiscriminatorPlan& plan) {
  if (plan.channels.empty()) throw std::invalid_argument("discriminator plan needs at least one stage");
  std::mt19937_64 rng(seed);
  const std::size_t stages = discriminator_stage_count(in_spatial, plan.channels.size());
  Discriminator<T> disc;
  auto& seq = disc.layers();
  std::size_t in = in_channels;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t out = plan.channels[s];
    const std::string prefix = "stage" + std::to_string(s + 1) + ".";
    seq.add(prefix + "conv", std::make_unique<Conv2d<T>>(nn::ConvSpec{in, out, 3, 3, 2, 1}, true, rng));
    seq.add(prefix + "bn_act", std::make_unique<BatchNorm<T>>(out, static_cast<T>(plan.leaky_slope)));
    in = out;
  }
  seq.add("pool", std::make_unique<GlobalAvgPool<T>>());
  seq.add("fc", std::make_unique<Linear<T>>(in, 1, rng));
  if (final_sigmoid) seq.add("sigmoid", std::make_unique<Sigmoid<T>>());
  disc.set_final_sigmoid(final_sigmoid);
  disc.set_stage_count(stages);
  return disc;
}

template <typename T>
ExtraClassifier<T> build_extra_classifier(const Network<T>& templ, std::size_t fused_channels,
                                          std::size_t num_classes, std::uint64_t seed) {
  if (fused_channels == 0) throw std::invalid_argument("build_extra_classifier: fused width must be positive");
  std::mt19937_64 rng(seed);
  ExtraClassifier<T> extra;
  auto& seq = extra.layers();
  switch (templ.head_kind()) {
    case HeadKind::kNin:
      seq.add("conv", std::make_unique<Conv2d<T>>(nn::ConvSpec{fused_channels, num_classes, 1, 1, 1, 0}, true, rng));
      seq.add("pool", std::make_unique<GlobalAvgPool<T>>());
      seq.add("fc", std::make_unique<Linear<T>>(num_classes, num_classes, rng));
      break;
    case HeadKind::kPoolLinear:
      seq.add("pool", std::make_unique<GlobalAvgPool<T>>());
      seq.add("fc", std::make_unique<Linear<T>>(fused_channels, num_classes, rng));
      break;
  }
  extra.set_input_channels(fused_channels);
  return extra;
}

#define DPCN_INSTANTIATE(T)                                                                                   \
  template Network<T> build_small_nin(std::size_t, double, std::uint64_t, std::size_t);                       \
  template Network<T> build_small_resnet(std::size_t, std::size_t, std::uint64_t, std::size_t);               \
  template Discriminator<T> build_discriminator(std::size_t, std::size_t, bool, std::uint64_t,                \
                                                const DiscriminatorPlan&);                                    \
  template ExtraClassifier<T> build_extra_classifier(const Network<T>&, std::size_t, std::size_t, std::uint64_t);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::models
