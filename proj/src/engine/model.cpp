#include "dpcn/engine/model.hpp"

#include <stdexcept>

#include "dpcn/core/ops.hpp"
#include "dpcn/models/zoo.hpp"

namespace dpcn::engine {

template <typename T>
std::vector<models::NamedTensor<T>> DpcnModel<T>::parameters() const {
  std::vector<models::NamedTensor<T>> out;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    for (auto& p : nets[i].parameters()) out.push_back({"subnet" + std::to_string(i) + "." + p.name, p.tensor});
  }
  for (auto& p : disc.parameters()) out.push_back(p);
  for (auto& p : extra.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<models::NamedBuffer<T>> DpcnModel<T>::buffers() const {
  std::vector<models::NamedBuffer<T>> out;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    for (auto& b : nets[i].buffers()) out.push_back({"subnet" + std::to_string(i) + "." + b.name, b.values});
  }
  for (auto& b : disc.buffers()) out.push_back(b);
  for (auto& b : extra.buffers()) out.push_back(b);
  return out;
}

template <typename T>
std::vector<Tensor<T>> DpcnModel<T>::subnet_parameters(std::size_t i) const {
  std::vector<Tensor<T>> out;
  for (auto& p : nets.at(i).parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
models::Network<T> build_backbone(const DpcnConfig& config, std::size_t num_classes, std::uint64_t seed,
                                  std::size_t input_channels) {
  models::Network<T> net = config.backbone == "resnet"
                               ? models::build_small_resnet<T>(config.resnet_blocks, num_classes, seed, input_channels)
                               : models::build_small_nin<T>(num_classes, config.width_multiplier, seed, input_channels);
  net.set_tap_stage(config.tap_point);
  return net;
}

template <typename T>
TapGeometry tap_geometry(models::Network<T>& net, std::size_t input_channels, std::size_t image_size) {
  NoGradGuard no_grad;
  net.set_training(false);
  auto out = net.extract(Tensor<T>(Shape{1, input_channels, image_size, image_size}));
  net.set_training(true);
  net.extractor().reset_evaluations();
  return {out.tap.dim(1), out.tap.dim(2), out.features.dim(1)};
}

template <typename T>
DpcnModel<T> build_model(const DpcnConfig& config, std::size_t num_classes, std::size_t input_channels,
                         std::size_t image_size) {
  config.validate();
  DpcnModel<T> model;
  model.num_classes = num_classes;
  for (std::size_t i = 0; i < config.n_subnets; ++i) {
    model.nets.push_back(build_backbone<T>(config, num_classes, config.subnet_seeds[i], input_channels));
  }
  const TapGeometry geo = tap_geometry(model.nets.front(), input_channels, image_size);
  models::DiscriminatorPlan plan;
  plan.channels = config.discriminator_channels;
  plan.leaky_slope = config.discriminator_slope;
  // Sigmoid output keeps NIN-tap scores inside the [0, 1] target range;
  // ResNet taps feed an unbounded linear score.
  model.disc = models::build_discriminator<T>(geo.channels, geo.spatial, config.backbone == "nin",
                                              config.discriminator_seed, plan);
  const std::size_t fused =
      config.fusion == Fusion::kConcat ? geo.feature_channels * config.n_subnets : geo.feature_channels;
  model.extra = models::build_extra_classifier<T>(model.nets.front(), fused, num_classes, config.extra_seed);
  return model;
}

template <typename T>
SubnetForward<T> forward_subnets(DpcnModel<T>& model, const Tensor<T>& x) {
  SubnetForward<T> f;
  for (auto& net : model.nets) {
    f.outputs.push_back(net.extract(x));
    f.logits.push_back(net.classify(f.outputs.back().features));
  }
  return f;
}

template <typename T>
std::vector<Tensor<T>> score_taps(DpcnModel<T>& model, const SubnetForward<T>& f, std::size_t skip_below) {
  std::vector<Tensor<T>> scores(f.outputs.size());
  for (std::size_t i = skip_below; i < f.outputs.size(); ++i) scores[i] = model.disc.forward(f.outputs[i].tap);
  return scores;
}

template <typename T>
std::vector<Tensor<T>> score_taps_joint(DpcnModel<T>& model, const SubnetForward<T>& f, bool detach) {
  std::vector<Tensor<T>> taps;
  for (const auto& out : f.outputs) taps.push_back(detach ? out.tap.detach() : out.tap);
  const std::size_t batch = taps.front().dim(0);
  Tensor<T> scores = model.disc.forward(concat_batch(taps));
  std::vector<Tensor<T>> split;
  for (std::size_t i = 0; i < taps.size(); ++i) split.push_back(slice_batch(scores, i * batch, (i + 1) * batch));
  return split;
}

template <typename T>
void set_trainable(const std::vector<models::NamedTensor<T>>& params, bool trainable) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.set_requires_grad(trainable);
  }
}

#define DPCN_INSTANTIATE(T)                                                                                   \
  template struct DpcnModel<T>;                                                                               \
  template models::Network<T> build_backbone(const DpcnConfig&, std::size_t, std::uint64_t, std::size_t);    \
  template DpcnModel<T> build_model(const DpcnConfig&, std::size_t, std::size_t, std::size_t);               \
  template TapGeometry tap_geometry(models::Network<T>&, std::size_t, std::size_t);                           \
  template SubnetForward<T> forward_subnets(DpcnModel<T>&, const Tensor<T>&);                                 \
  template std::vector<Tensor<T>> score_taps(DpcnModel<T>&, const SubnetForward<T>&, std::size_t);            \
  template std::vector<Tensor<T>> score_taps_joint(DpcnModel<T>&, const SubnetForward<T>&, bool);             \
  template void set_trainable(const std::vector<models::NamedTensor<T>>&, bool);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::engine
