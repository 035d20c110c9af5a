#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dpcn/core/ops.hpp"
#include "dpcn/data/dataset.hpp"
#include "dpcn/models/zoo.hpp"
#include "dpcn/xai/gradcam.hpp"

namespace dpcn::xai {
namespace {

Heatmap map_of(std::size_t h, std::size_t w, std::vector<double> values) {
  Heatmap m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  return m;
}

Tensor<float> images(std::size_t n, std::uint64_t seed) {
  auto ds = data::synthetic_shapes(n, 4, 16, seed);
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return data::make_batch(ds, idx, {}, nullptr);
}

TEST(CamFromGradients, UnitGradientGivesReluOfActivation) {
  const std::vector<double> a{1.0, -2.0, 0.5, 0.0, -0.1, 3.0};
  const auto m = cam_from_gradients(a, std::vector<double>(6, 1.0), 1, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(m.values[i], std::max(0.0, a[i]));
}

TEST(CamFromGradients, ZeroGradientGivesZeroMap) {
  const auto m = cam_from_gradients(std::vector<double>(18, 1.7), std::vector<double>(18, 0.0), 2, 3, 3);
  EXPECT_TRUE(m.all_zero());
}

TEST(CamFromGradients, WeightedChannelSum) {
  const std::vector<double> a1{1, 0, 2, -1, 3, 0.5, 0, 1, -2};
  const std::vector<double> a2{0, 1, 1, 2, -1, 0, 3, 0.5, 1};
  std::vector<double> act(a1);
  act.insert(act.end(), a2.begin(), a2.end());
  // Non-constant gradients whose spatial means are 2 and -1.
  std::vector<double> grad{2, 2, 2, 1, 3, 2, 0, 4, 2, -1, -1, -1, -2, 0, -1, -1, -3, 1};
  const auto m = cam_from_gradients(act, grad, 2, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(m.values[i], std::max(0.0, 2 * a1[i] - a2[i]), 1e-12);
}

TEST(GradCam, NonNegativeAtTapResolution) {
  auto net = models::build_small_nin<float>(4, 0.125, 1);
  const auto x = images(1, 3);
  const auto maps = grad_cam(net, x, std::vector<std::size_t>(4, 2));
  ASSERT_EQ(maps.size(), 4u);
  for (const auto& m : maps) {
    EXPECT_EQ(m.target_layer, "block3");
    EXPECT_EQ(m.height, 4u);
    EXPECT_EQ(m.class_index, 2u);
    for (double v : m.values) EXPECT_GE(v, 0.0);
  }
}

TEST(GradCam, DependsOnlyOnSelectedLogit) {
  auto net = models::build_small_nin<float>(4, 0.125, 2);
  const auto x = images(1, 4);
  const auto one_hot = grad_cam(net, x, std::vector<std::size_t>{1, 1, 1, 1});
  std::vector<float> seed(4 * 4, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) seed[i * 4 + 1] = 1.0f;
  const auto seeded = grad_cam_seeded(net, x, seed);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(one_hot[i].values, seeded[i].values);
  // Other logits' gradients do change the map once they are not zeroed.
  for (std::size_t i = 0; i < 4; ++i) seed[i * 4 + 3] = 1.0f;
  const auto mixed = grad_cam_seeded(net, x, seed);
  bool differs = false;
  for (std::size_t i = 0; i < 4; ++i) differs |= mixed[i].values != one_hot[i].values;
  EXPECT_TRUE(differs);
}

TEST(GradCam, BatchedEqualsPerSample) {
  auto net = models::build_small_nin<float>(4, 0.125, 3);
  const auto x = images(1, 5);
  const auto batch = grad_cam(net, x, std::vector<std::size_t>{0, 1, 2, 3});
  const auto single = grad_cam(net, slice_batch(x, 2, 3), std::size_t{2});
  for (std::size_t i = 0; i < single.values.size(); ++i) EXPECT_NEAR(single.values[i], batch[2].values[i], 1e-5);
}

TEST(GradCam, LeavesParametersWithoutGradient) {
  auto net = models::build_small_nin<float>(4, 0.125, 4);
  const auto before = models::flatten_parameters(net.parameters());
  grad_cam(net, slice_batch(images(1, 6), 0, 1), std::size_t{0});
  EXPECT_EQ(models::flatten_parameters(net.parameters()), before);
  for (const auto& p : net.parameters()) {
    EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
    for (float g : p.tensor.grad()) ASSERT_EQ(g, 0.0f) << p.name;
  }
}

TEST(GradCam, UnknownLayerRejected) {
  auto net = models::build_small_nin<float>(4, 0.125, 1);
  EXPECT_THROW(grad_cam(net, slice_batch(images(1, 7), 0, 1), std::size_t{0}, "block9"), std::invalid_argument);
  EXPECT_NO_THROW(grad_cam(net, slice_batch(images(1, 7), 0, 1), std::size_t{0}, "block2"));
}

TEST(Upsample, ClosedFormTwoByTwo) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto up = upsample_bilinear(v, 2, 2, 4, 4);
  // Half-pixel centres: source coordinate (i + 0.5) / 2 - 0.5, clamped.
  const double w[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double top = v[0] * (1 - w[j]) + v[1] * w[j];
      const double bottom = v[2] * (1 - w[j]) + v[3] * w[j];
      EXPECT_NEAR(up[i * 4 + j], top * (1 - w[i]) + bottom * w[i], 1e-12);
    }
  }
}

TEST(Overlay, ZeroMapBlendsWithZeroColour) {
  std::vector<float> base(3 * 4 * 4);
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = float(i % 7) / 7.0f;
  const auto rgb = overlay(map_of(2, 2, {0, 0, 0, 0}), base, 3, 4, 4);
  const auto zero = colormap(0.0);
  for (std::size_t p = 0; p < 16; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(rgb[p * 3 + c], std::lround(255.0 * (0.5 * base[c * 16 + p] + 0.5 * zero[c])));
    }
  }
}

TEST(Overlay, ConstantMapGivesUniformTint) {
  const std::vector<float> base(4 * 4, 0.4f);
  const auto rgb = overlay(map_of(2, 2, {3, 3, 3, 3}), base, 1, 4, 4);
  for (std::size_t p = 1; p < 16; ++p) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(rgb[p * 3 + c], rgb[c]);
  }
  const auto top = colormap(1.0);
  EXPECT_EQ(rgb[0], std::lround(255.0 * (0.5 * 0.4 + 0.5 * top[0])));
}

TEST(Colormap, BlueToRed) {
  EXPECT_EQ(colormap(0.0), (std::array<double, 3>{0.0, 0.0, 1.0}));
  EXPECT_EQ(colormap(1.0), (std::array<double, 3>{1.0, 0.0, 0.0}));
}

TEST(Render, WritesPngAndRejectsBadPath) {
  const std::vector<float> base(3 * 8 * 8, 0.5f);
  const auto path = (std::filesystem::path(::testing::TempDir()) / "heat.png").string();
  render_heatmap(map_of(2, 2, {0, 1, 2, 3}), base, 3, 8, 8, path);
  std::ifstream in(path, std::ios::binary);
  char sig[8] = {};
  in.read(sig, 8);
  EXPECT_EQ(std::string(sig + 1, 3), "PNG");
  EXPECT_THROW(render_heatmap(map_of(2, 2, {0, 1, 2, 3}), base, 3, 8, 8, "/nonexistent-dir/x.png"),
               std::runtime_error);
}

TEST(Overlap, Examples) {
  const auto h = map_of(2, 2, {0.0, 1.0, 2.0, 0.5});
  EXPECT_NEAR(heatmap_overlap(h, h), 1.0, 1e-12);
  EXPECT_NEAR(heatmap_overlap(h, map_of(2, 2, {0.0, 2.0, 4.0, 1.0})), 1.0, 1e-12);
  EXPECT_EQ(heatmap_overlap(map_of(2, 2, {1, 0, 0, 0}), map_of(2, 2, {0, 0, 3, 2})), 0.0);
  const auto g = map_of(2, 2, {1.0, 0.2, 0.0, 0.7});
  EXPECT_NEAR(heatmap_overlap(h, g), heatmap_overlap(g, h), 1e-15);
  EXPECT_NEAR(heatmap_overlap(map_of(2, 2, {2.0, 0.4, 0.0, 1.4}), h), heatmap_overlap(g, h), 1e-12);
  EXPECT_EQ(heatmap_overlap(h, map_of(2, 2, {0, 0, 0, 0})), 0.0);
  EXPECT_THROW(heatmap_overlap(map_of(2, 2, {0, 0, 0, 0}), map_of(2, 2, {0, 0, 0, 0})), std::invalid_argument);
  EXPECT_THROW(heatmap_overlap(h, map_of(1, 4, {0, 1, 2, 0.5})), std::invalid_argument);
}

TEST(Overlap, SameNetworkIsFullOverlap) {
  auto net = models::build_small_nin<float>(4, 0.125, 5);
  auto ds = data::synthetic_shapes(2, 4, 16, 9);
  std::size_t skipped = 0;
  const double o = mean_overlap(net, net, ds, {}, &skipped);
  EXPECT_NEAR(o, 1.0, 1e-9);
  EXPECT_LT(skipped, ds.size());
}

}  // namespace
}  // namespace dpcn::xai
