#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dpcn/data/dataset.hpp"
#include "dpcn/models/network.hpp"

namespace dpcn::xai {

/// Non-negative class-activation map at the target layer's resolution.
struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major
  std::size_t class_index = 0;
  std::string target_layer;

  double max() const;
  bool all_zero() const { return max() == 0.0; }
};

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of `grad` over
/// channel k. `activation` and `grad` are one (K, H, W) sample.
Heatmap cam_from_gradients(std::span<const double> activation, std::span<const double> grad, std::size_t channels,
                           std::size_t height, std::size_t width);

/// Grad-CAM for every sample of `x` (eval mode, no parameter updates).
/// Each sample's map is taken with respect to the logit of its own entry
/// in `class_indices`. An empty `target_layer` selects the tap stage.
std::vector<Heatmap> grad_cam(models::Network<float>& net, const Tensor<float>& x,
                              const std::vector<std::size_t>& class_indices, const std::string& target_layer = {});
Heatmap grad_cam(models::Network<float>& net, const Tensor<float>& x, std::size_t class_index,
                 const std::string& target_layer = {});

/// Same, seeded with an explicit gradient of the (N, classes) logits.
/// grad_cam is this with a one-hot seed.
std::vector<Heatmap> grad_cam_seeded(models::Network<float>& net, const Tensor<float>& x,
                                     std::span<const float> logit_seed, const std::string& target_layer = {});

/// Bilinear resize with half-pixel sample centres and edge clamping.
std::vector<double> upsample_bilinear(std::span<const double> values, std::size_t height, std::size_t width,
                                      std::size_t out_height, std::size_t out_width);

/// Fixed blue (t = 0) to red (t = 1) ramp, RGB in [0, 1].
std::array<double, 3> colormap(double t);

/// Max-normalised, upsampled, colour-mapped heatmap blended 50/50 over the
/// base image (CHW in [0, 1], one or three channels). Interleaved RGB bytes.
std::vector<unsigned char> overlay(const Heatmap& heatmap, std::span<const float> base_image, std::size_t channels,
                                   std::size_t height, std::size_t width);

/// Writes the overlay as an 8-bit RGB PNG. Throws when the file cannot be
/// written.
void render_heatmap(const Heatmap& heatmap, std::span<const float> base_image, std::size_t channels,
                    std::size_t height, std::size_t width, const std::string& out_path);
void write_png(const std::string& path, std::span<const unsigned char> rgb, std::size_t height, std::size_t width);

/// Cosine similarity of the max-normalised maps. Rejects differing shapes
/// and a pair of all-zero maps; a single all-zero map scores 0.
double heatmap_overlap(const Heatmap& a, const Heatmap& b);

/// Mean overlap between two networks' Grad-CAMs for the true class of each
/// image. Pairs where both maps vanish are skipped; `skipped` reports them.
double mean_overlap(models::Network<float>& a, models::Network<float>& b, const data::ImageDataset& ds,
                    const std::string& target_layer = {}, std::size_t* skipped = nullptr);

}  // namespace dpcn::xai
