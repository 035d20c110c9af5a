#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpcn/core/tensor.hpp"

namespace dpcn::data {

enum class Split { kTrain, kTest };
enum class CifarVariant { kCifar10, kCifar100 };

/// Images stored as float NCHW (values in [0, 1] until normalised).
struct ImageDataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  Split split = Split::kTrain;
  /// Statistics of the normalisation that has been applied; empty while the
  /// data is raw.
  std::vector<double> channel_means;
  std::vector<double> channel_stds;

  std::size_t size() const { return labels.size(); }
  std::size_t image_elements() const { return channels * height * width; }
  bool normalized() const { return !channel_means.empty(); }
  std::span<const float> image(std::size_t i) const;
};

/// CIFAR binary batches: 3073-byte records (label, 3072 pixels) for
/// CIFAR-10 and 3074-byte records (coarse, fine, pixels) for CIFAR-100, whose
/// fine label is used. Pixels are R, G, B planes of 1024 bytes mapped to [0,1].
ImageDataset load_cifar_binary(const std::string& path, CifarVariant variant, Split split = Split::kTrain);

/// Per-channel sample mean and (population) standard deviation.
std::vector<double> compute_channel_means(const ImageDataset& ds);
std::vector<double> compute_channel_stds(const ImageDataset& ds);

/// x <- (x - mean[c]) / std[c]. Rejects zero stds and a second normalisation.
ImageDataset normalize_channels(ImageDataset ds, const std::vector<double>& means, const std::vector<double>& stds);
/// Inverse of the recorded normalisation.
ImageDataset denormalize_channels(ImageDataset ds);

/// Zero-pads one CHW image by `pad` and crops the `crop` x `crop` window at
/// (top, left) of the padded image.
std::vector<float> crop_padded(std::span<const float> image, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t pad, std::size_t crop, std::size_t top,
                               std::size_t left);
/// Same with a uniformly random offset drawn from `rng`.
std::vector<float> random_crop_pad(std::span<const float> image, std::size_t channels, std::size_t height,
                                   std::size_t width, std::size_t pad, std::size_t crop, std::mt19937_64& rng);

/// Difficulty knobs for the synthetic benchmark.
struct SyntheticOptions {
  double noise_std = 0.08;      // additive Gaussian pixel noise
  std::size_t clutter = 3;      // distractor strokes per image
  double min_scale = 0.22;      // figure radius as a fraction of the image size
  double max_scale = 0.40;
  double contrast_floor = 0.25; // minimum figure/background brightness gap
};

/// Class k renders figure kind k % 4 (disc, square, triangle, cross); classes
/// 4..7 use the outlined variants. Position, scale, rotation, hue, background
/// gradient and clutter are random. At most 8 classes.
ImageDataset synthetic_shapes(std::size_t n_per_class, std::size_t classes, std::size_t image_size,
                              std::uint64_t seed, const SyntheticOptions& options = {});

struct AugmentOptions {
  bool enabled = false;
  std::size_t pad = 4;
  bool horizontal_flip = false;
};

/// Shuffled visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng);

/// Stacks the listed images into an (N, C, H, W) tensor. When augmentation
/// is enabled each image gets an independent random crop (and optional flip)
/// drawn from `rng`.
Tensor<float> make_batch(const ImageDataset& ds, std::span<const std::size_t> indices, const AugmentOptions& augment,
                         std::mt19937_64* rng);
std::vector<std::size_t> batch_labels(const ImageDataset& ds, std::span<const std::size_t> indices);

/// SHA-256 over image bytes and labels, hex encoded; identifies an
/// evaluation split in reports.
std::string dataset_digest(const ImageDataset& ds);

/// Writes a dataset in the CIFAR-10 record layout (one label byte, then
/// planes), quantising pixels to bytes. Only for raw 3x32x32 data.
void save_binary_records(const ImageDataset& ds, const std::string& path);

}  // namespace dpcn::data
