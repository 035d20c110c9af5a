#include "dpcn/data/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "dpcn/data/checkpoint.hpp"

namespace dpcn::data {

std::span<const float> ImageDataset::image(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("ImageDataset::image: index out of range");
  return {images.data() + i * image_elements(), image_elements()};
}

ImageDataset load_cifar_binary(const std::string& path, CifarVariant variant, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR file '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t header = variant == CifarVariant::kCifar10 ? 1 : 2;
  const std::size_t pixels = 3 * 32 * 32;
  const std::size_t record = header + pixels;
  if (bytes.size() % record != 0) {
    throw std::runtime_error("CIFAR file '" + path + "': size " + std::to_string(bytes.size()) +
                             " is not a multiple of the " + std::to_string(record) + "-byte record; trailing record starts at byte " +
                             std::to_string(bytes.size() - bytes.size() % record));
  }
  ImageDataset ds;
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.class_count = variant == CifarVariant::kCifar10 ? 10 : 100;
  ds.split = split;
  const std::size_t n = bytes.size() / record;
  ds.images.resize(n * pixels);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    const std::size_t label = rec[header - 1];
    if (label >= ds.class_count) {
      throw std::runtime_error("CIFAR file '" + path + "': label " + std::to_string(label) + " at byte offset " +
                               std::to_string(i * record + header - 1) + " exceeds class count " +
                               std::to_string(ds.class_count));
    }
    ds.labels[i] = label;
    for (std::size_t p = 0; p < pixels; ++p) ds.images[i * pixels + p] = static_cast<float>(rec[header + p]) / 255.0f;
  }
  return ds;
}

std::vector<double> compute_channel_means(const ImageDataset& ds) {
  std::vector<double> means(ds.channels, 0.0);
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      const float* p = ds.images.data() + (i * ds.channels + c) * plane;
      double acc = 0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      means[c] += acc;
    }
  }
  for (auto& m : means) m /= static_cast<double>(ds.size() * plane);
  return means;
}

std::vector<double> compute_channel_stds(const ImageDataset& ds) {
  const auto means = compute_channel_means(ds);
  std::vector<double> stds(ds.channels, 0.0);
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      const float* p = ds.images.data() + (i * ds.channels + c) * plane;
      double acc = 0;
      for (std::size_t k = 0; k < plane; ++k) acc += (p[k] - means[c]) * (p[k] - means[c]);
      stds[c] += acc;
    }
  }
  for (auto& s : stds) s = std::sqrt(s / static_cast<double>(ds.size() * plane));
  return stds;
}

ImageDataset normalize_channels(ImageDataset ds, const std::vector<double>& means, const std::vector<double>& stds) {
  if (ds.normalized()) throw std::logic_error("normalize_channels: dataset is already normalised");
  if (means.size() != ds.channels || stds.size() != ds.channels) {
    throw std::invalid_argument("normalize_channels: need one mean and one std per channel");
  }
  for (double s : stds) {
    if (!(s > 0.0)) throw std::invalid_argument("normalize_channels: standard deviation must be positive");
  }
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      float* p = ds.images.data() + (i * ds.channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - means[c]) / stds[c]);
    }
  }
  ds.channel_means = means;
  ds.channel_stds = stds;
  return ds;
}

ImageDataset denormalize_channels(ImageDataset ds) {
  if (!ds.normalized()) throw std::logic_error("denormalize_channels: dataset is not normalised");
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      float* p = ds.images.data() + (i * ds.channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        p[k] = static_cast<float>(p[k] * ds.channel_stds[c] + ds.channel_means[c]);
      }
    }
  }
  ds.channel_means.clear();
  ds.channel_stds.clear();
  return ds;
}

std::vector<float> crop_padded(std::span<const float> image, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t pad, std::size_t crop, std::size_t top,
                               std::size_t left) {
  if (image.size() != channels * height * width) throw std::invalid_argument("crop: image size mismatch");
  if (crop > height + 2 * pad || crop > width + 2 * pad) throw std::invalid_argument("crop: window exceeds padded image");
  if (top + crop > height + 2 * pad || left + crop > width + 2 * pad) {
    throw std::invalid_argument("crop: offset outside padded image");
  }
  std::vector<float> out(channels * crop * crop, 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < crop; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(top + y) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
      for (std::size_t x = 0; x < crop; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(left + x) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
        out[(c * crop + y) * crop + x] = image[(c * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

std::vector<float> random_crop_pad(std::span<const float> image, std::size_t channels, std::size_t height,
                                   std::size_t width, std::size_t pad, std::size_t crop, std::mt19937_64& rng) {
  if (crop > height + 2 * pad || crop > width + 2 * pad) throw std::invalid_argument("crop: window exceeds padded image");
  const std::size_t top = std::uniform_int_distribution<std::size_t>(0, height + 2 * pad - crop)(rng);
  const std::size_t left = std::uniform_int_distribution<std::size_t>(0, width + 2 * pad - crop)(rng);
  return crop_padded(image, channels, height, width, pad, crop, top, left);
}

namespace {

struct Vec2 {
  double x, y;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Signed distance (pixels) of a regular polygon with circumradius r.
double polygon_sdf(Vec2 p, int sides, double r, double rotation) {
  const double apothem = r * std::cos(std::numbers::pi / sides);
  double d = -1e9;
  for (int i = 0; i < sides; ++i) {
    const double a = rotation + (2.0 * i + 1.0) * std::numbers::pi / sides;
    d = std::max(d, p.x * std::cos(a) + p.y * std::sin(a) - apothem);
  }
  return d;
}

double rect_sdf(Vec2 p, double hx, double hy, double rotation) {
  const double c = std::cos(rotation), s = std::sin(rotation);
  const double x = c * p.x + s * p.y, y = -s * p.x + c * p.y;
  return std::max(std::abs(x) - hx, std::abs(y) - hy);
}

double figure_sdf(int kind, Vec2 p, double r, double rotation) {
  switch (kind) {
    case 0:
      return std::hypot(p.x, p.y) - r;
    case 1:
      return polygon_sdf(p, 4, r, rotation);
    case 2:
      return polygon_sdf(p, 3, r * 1.15, rotation);
    default:
      return std::min(rect_sdf(p, r, 0.3 * r, rotation), rect_sdf(p, 0.3 * r, r, rotation));
  }
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy + 1e-12), 0.0, 1.0);
  return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& v2 : rgb) v2 += v - c;
  return rgb;
}

double luminance(const std::array<double, 3>& rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

void render(float* out, std::size_t size, std::size_t cls, std::mt19937_64& rng, const SyntheticOptions& opt) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opt.noise_std);
  const double S = static_cast<double>(size);
  const std::size_t plane = size * size;

  // Background: random colour with a linear brightness gradient.
  const auto bg = hsv_to_rgb(u(rng), 0.2 + 0.6 * u(rng), 0.2 + 0.7 * u(rng));
  const double grad_angle = 2.0 * std::numbers::pi * u(rng);
  const double grad_amp = 0.25 * u(rng);
  std::array<double, 3> fg{};
  for (int attempt = 0; attempt < 64; ++attempt) {
    fg = hsv_to_rgb(u(rng), 0.3 + 0.7 * u(rng), 0.1 + 0.9 * u(rng));
    if (std::abs(luminance(fg) - luminance(bg)) >= opt.contrast_floor) break;
  }

  const int kind = static_cast<int>(cls % 4);
  const bool outlined = cls >= 4;
  const double r = S * (opt.min_scale + (opt.max_scale - opt.min_scale) * u(rng));
  const double margin = 0.6 * r;
  const Vec2 centre{margin + (S - 2 * margin) * u(rng), margin + (S - 2 * margin) * u(rng)};
  const double rotation = 2.0 * std::numbers::pi * u(rng);
  const double thickness = std::max(1.0, 0.18 * r);

  struct Stroke {
    Vec2 a, b;
    std::array<double, 3> colour;
    double width;
  };
  std::vector<Stroke> strokes(opt.clutter);
  for (auto& s : strokes) {
    s.a = {S * u(rng), S * u(rng)};
    const double len = S * (0.2 + 0.4 * u(rng));
    const double ang = 2.0 * std::numbers::pi * u(rng);
    s.b = {s.a.x + len * std::cos(ang), s.a.y + len * std::sin(ang)};
    s.colour = hsv_to_rgb(u(rng), u(rng), u(rng));
    s.width = 0.6 + 0.8 * u(rng);
  }

  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const Vec2 p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      const double g = grad_amp * ((p.x / S - 0.5) * std::cos(grad_angle) + (p.y / S - 0.5) * std::sin(grad_angle));
      std::array<double, 3> px{bg[0] + g, bg[1] + g, bg[2] + g};
      for (const auto& s : strokes) {
        const double cover = clamp01(s.width - segment_distance(p, s.a, s.b));
        for (int c = 0; c < 3; ++c) px[c] = (1 - cover) * px[c] + cover * s.colour[c];
      }
      double sdf = figure_sdf(kind, {p.x - centre.x, p.y - centre.y}, r, rotation);
      if (outlined) sdf = std::abs(sdf + 0.5 * thickness) - 0.5 * thickness;
      const double cover = clamp01(0.5 - sdf);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - cover) * px[c] + cover * fg[c] + noise(rng);
        out[c * plane + y * size + x] = static_cast<float>(clamp01(v));
      }
    }
  }
}

}  // namespace

ImageDataset synthetic_shapes(std::size_t n_per_class, std::size_t classes, std::size_t image_size,
                              std::uint64_t seed, const SyntheticOptions& options) {
  if (classes < 2) throw std::invalid_argument("synthetic_shapes: need at least two classes");
  if (classes > 8) throw std::invalid_argument("synthetic_shapes: at most eight classes");
  if (image_size < 8) throw std::invalid_argument("synthetic_shapes: image size must be at least 8");
  if (!(options.min_scale > 0.0) || options.max_scale < options.min_scale || options.max_scale > 0.5) {
    throw std::invalid_argument("synthetic_shapes: scale range must satisfy 0 < min <= max <= 0.5");
  }
  ImageDataset ds;
  ds.channels = 3;
  ds.height = ds.width = image_size;
  ds.class_count = classes;
  const std::size_t n = n_per_class * classes;
  ds.images.resize(n * ds.image_elements());
  ds.labels.resize(n);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = i % classes;
    render(ds.images.data() + i * ds.image_elements(), image_size, ds.labels[i], rng, options);
  }
  return ds;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Explicit Fisher-Yates so the permutation does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Tensor<float> make_batch(const ImageDataset& ds, std::span<const std::size_t> indices, const AugmentOptions& augment,
                         std::mt19937_64* rng) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  if (augment.enabled && rng == nullptr) throw std::invalid_argument("make_batch: augmentation needs an rng");
  if (augment.enabled && ds.split != Split::kTrain) {
    throw std::invalid_argument("make_batch: augmentation applies only to the training split");
  }
  const std::size_t per = ds.image_elements();
  std::vector<float> values(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto src = ds.image(indices[b]);
    float* dst = values.data() + b * per;
    if (!augment.enabled) {
      std::copy(src.begin(), src.end(), dst);
      continue;
    }
    auto cropped = random_crop_pad(src, ds.channels, ds.height, ds.width, augment.pad, ds.height, *rng);
    if (augment.horizontal_flip && ((*rng)() & 1u)) {
      for (std::size_t c = 0; c < ds.channels; ++c) {
        for (std::size_t y = 0; y < ds.height; ++y) {
          float* row = cropped.data() + (c * ds.height + y) * ds.width;
          std::reverse(row, row + ds.width);
        }
      }
    }
    std::copy(cropped.begin(), cropped.end(), dst);
  }
  return Tensor<float>(Shape{indices.size(), ds.channels, ds.height, ds.width}, std::move(values));
}

std::vector<std::size_t> batch_labels(const ImageDataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = ds.labels.at(indices[i]);
  return out;
}

std::string dataset_digest(const ImageDataset& ds) {
  std::string bytes(reinterpret_cast<const char*>(ds.images.data()), ds.images.size() * sizeof(float));
  for (std::size_t label : ds.labels) bytes += std::to_string(label) + ",";
  bytes += std::to_string(ds.channels) + "x" + std::to_string(ds.height) + "x" + std::to_string(ds.width);
  return sha256_hex(bytes);
}

void save_binary_records(const ImageDataset& ds, const std::string& path) {
  if (ds.normalized()) throw std::logic_error("save_binary_records: dataset must be raw");
  if (ds.class_count > 256) throw std::invalid_argument("save_binary_records: labels must fit in one byte");
  if (ds.channels != 3 || ds.height != 32 || ds.width != 32) {
    throw std::invalid_argument("save_binary_records: the record layout holds 3x32x32 images only");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  const std::size_t per = ds.image_elements();
  std::vector<unsigned char> record(1 + per);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    record[0] = static_cast<unsigned char>(ds.labels[i]);
    auto img = ds.image(i);
    for (std::size_t p = 0; p < per; ++p) {
      record[1 + p] = static_cast<unsigned char>(std::lround(std::clamp(img[p], 0.0f, 1.0f) * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(record.data()), static_cast<std::streamsize>(record.size()));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace dpcn::data
