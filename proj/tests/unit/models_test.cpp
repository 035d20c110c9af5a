#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "dpcn/models/zoo.hpp"

namespace dpcn::models {
namespace {

Tensor<float> random_images(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n * 3 * size * size);
  for (auto& e : v) e = d(rng);
  return Tensor<float>(Shape{n, 3, size, size}, std::move(v));
}

std::size_t conv_parameter_count(const Network<float>& net) {
  std::size_t total = 0;
  for (const auto& p : net.parameters()) {
    if (p.tensor.rank() == 4) total += p.tensor.numel();
  }
  return total;
}

TEST(SmallNin, LogitShape) {
  auto net = build_small_nin<float>(10, 0.25, 1);
  EXPECT_EQ(net.forward(random_images(2, 32, 1)).shape(), (Shape{2, 10}));
}

TEST(SmallNin, DoubledWidthQuadruplesConvParameters) {
  const auto base = build_small_nin<float>(10, 0.25, 1);
  const auto wide = build_small_nin<float>(10, 0.5, 1);
  const double ratio = double(conv_parameter_count(wide)) / double(conv_parameter_count(base));
  // Only the RGB input and the class outputs do not scale.
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.0);
  for (std::size_t i = 0; i + 1 < base.extractor().size(); ++i) {
    if (base.extractor().layer(i).kind() != "conv2d") continue;
    const auto& a = dynamic_cast<const Conv2d<float>&>(base.extractor().layer(i)).spec();
    const auto& b = dynamic_cast<const Conv2d<float>&>(wide.extractor().layer(i)).spec();
    EXPECT_EQ(b.out_channels, 2 * a.out_channels);
  }
}

TEST(SmallNin, SplitMatchesUndividedForward) {
  auto net = build_small_nin<float>(4, 0.25, 3);
  net.set_training(false);
  const auto x = random_images(3, 32, 2);
  const auto split = net.forward(x);
  const auto whole = net.forward_undivided(x);
  ASSERT_EQ(split.shape(), whole.shape());
  for (std::size_t i = 0; i < split.numel(); ++i) EXPECT_EQ(split[i], whole[i]);
}

TEST(SmallNin, ParameterGroupsPartition) {
  const auto net = build_small_nin<float>(4, 0.25, 3);
  std::set<std::string> names;
  for (const auto& p : net.extractor_parameters()) names.insert(p.name);
  for (const auto& p : net.classifier_parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_EQ(names.size(), net.parameters().size());
  EXPECT_EQ(net.extractor_parameters().size() + net.classifier_parameters().size(), net.parameters().size());
}

TEST(SmallNin, SeedsGiveDistinctParameters) {
  const auto a = flatten_parameters(build_small_nin<float>(4, 0.25, 1).parameters());
  const auto b = flatten_parameters(build_small_nin<float>(4, 0.25, 2).parameters());
  ASSERT_EQ(a.size(), b.size());
  float diff = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 0.0f);
}

TEST(SmallNin, TapIsFourDimensional) {
  auto net = build_small_nin<float>(4, 0.25, 1);
  EXPECT_EQ(net.tap_stage(), "block3");
  EXPECT_EQ(net.extract(random_images(2, 32, 4)).tap.rank(), 4u);
}

TEST(SmallResnet, LogitShapeAndPartition) {
  auto net = build_small_resnet<float>(1, 7, 5);
  EXPECT_EQ(net.forward(random_images(1, 32, 5)).shape(), (Shape{1, 7}));
  EXPECT_EQ(net.extractor_parameters().size() + net.classifier_parameters().size(), net.parameters().size());
}

TEST(SmallResnet, ZeroResidualBranchIsIdentity) {
  std::mt19937_64 rng(6);
  ResidualBlock<float> block(4, 4, 1, rng);
  block.zero_residual_branch();
  block.set_training(false);
  std::vector<float> v(2 * 4 * 5 * 5);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& e : v) e = std::abs(d(rng));  // non-negative: the block ends in ReLU
  const Tensor<float> x(Shape{2, 4, 5, 5}, v);
  const auto y = block.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Discriminator, ShapeAndSigmoidRange) {
  auto disc = build_discriminator<float>(8, 8, true, 11);
  const auto s = disc.forward(Tensor<float>(Shape{4, 8, 8, 8}, std::vector<float>(4 * 8 * 64, 0.3f)));
  EXPECT_EQ(s.shape(), (Shape{4, 1}));
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.0f, 3.0f);
  std::vector<float> v(4 * 8 * 64);
  for (auto& e : v) e = d(rng);
  const auto r = disc.forward(Tensor<float>(Shape{4, 8, 8, 8}, v));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GT(r[i], 0.0f);
    EXPECT_LT(r[i], 1.0f);
  }
}

TEST(Discriminator, ZeroWeightsGiveOneHalf) {
  auto disc = build_discriminator<float>(8, 8, true, 12);
  for (auto& p : disc.parameters()) std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0f);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(3 * 8 * 64);
  for (auto& e : v) e = d(rng);
  const auto s = disc.forward(Tensor<float>(Shape{3, 8, 8, 8}, v));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s[i], 0.5f);
}

TEST(Discriminator, FewerStagesOnSmallMaps) {
  EXPECT_EQ(discriminator_stage_count(8), 3u);
  EXPECT_EQ(discriminator_stage_count(4), 2u);
  EXPECT_EQ(discriminator_stage_count(1), 1u);
  for (std::size_t spatial : {1u, 2u, 4u, 8u, 16u}) {
    auto disc = build_discriminator<float>(4, spatial, false, 13);
    EXPECT_EQ(disc.forward(Tensor<float>(Shape{2, 4, spatial, spatial}, 0.1f)).shape(), (Shape{2, 1}));
  }
}

TEST(ExtraClassifier, FusedWidths) {
  auto net = build_small_nin<float>(5, 1.0, 1);
  ASSERT_EQ(net.feature_channels(), 192u);
  auto concat = build_extra_classifier(net, 384, 5, 2);
  auto summed = build_extra_classifier(net, 192, 5, 2);
  EXPECT_EQ(concat.input_channels(), 384u);
  EXPECT_EQ(summed.input_channels(), 192u);
  ASSERT_EQ(concat.layers().size(), summed.layers().size());
  for (std::size_t i = 0; i < concat.layers().size(); ++i) {
    EXPECT_EQ(concat.layers().layer(i).kind(), summed.layers().layer(i).kind());
  }
  EXPECT_EQ(concat.layers().layer(concat.layers().size() - 1).kind(), "linear");
  EXPECT_EQ(concat.forward(Tensor<float>(Shape{2, 384, 8, 8}, 0.2f)).shape(), (Shape{2, 5}));
}

}  // namespace
}  // namespace dpcn::models
