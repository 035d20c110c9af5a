#include "dpcn/xai/gradcam.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "dpcn/core/ops.hpp"

namespace dpcn::xai {

double Heatmap::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

Heatmap cam_from_gradients(std::span<const double> activation, std::span<const double> grad, std::size_t channels,
                           std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (activation.size() != channels * plane || grad.size() != activation.size()) {
    throw std::invalid_argument("cam_from_gradients: activation and gradient must both be (K, H, W)");
  }
  Heatmap h;
  h.height = height;
  h.width = width;
  h.values.assign(plane, 0.0);
  for (std::size_t k = 0; k < channels; ++k) {
    const double alpha = std::accumulate(grad.begin() + k * plane, grad.begin() + (k + 1) * plane, 0.0) /
                         static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) h.values[p] += alpha * activation[k * plane + p];
  }
  for (auto& v : h.values) v = std::max(v, 0.0);
  return h;
}

namespace {

// Turns requires-grad off for a parameter list until destruction.
class FrozenParameters {
 public:
  explicit FrozenParameters(std::vector<models::NamedTensor<float>> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      was_trainable_.push_back(p.tensor.requires_grad());
      p.tensor.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.set_requires_grad(was_trainable_[i]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<models::NamedTensor<float>> params_;
  std::vector<bool> was_trainable_;
};

}  // namespace

std::vector<Heatmap> grad_cam_seeded(models::Network<float>& net, const Tensor<float>& x,
                                     std::span<const float> logit_seed, const std::string& target_layer) {
  const std::string layer = target_layer.empty() ? net.tap_stage() : target_layer;
  net.resolve_layer(layer);  // rejects unknown names before any work
  net.set_training(false);
  // Graph recording is driven by the input alone; parameters stay untouched.
  FrozenParameters frozen(net.parameters());
  Tensor<float> input = x.detach();
  input.set_requires_grad(true);
  auto [logits, activation] = net.forward_capture(input, layer);
  if (activation.rank() != 4) throw std::invalid_argument("grad_cam: layer '" + layer + "' is not a 4-D activation");
  activation.retain_grad();
  if (logit_seed.size() != logits.numel()) throw std::invalid_argument("grad_cam: seed must match the logits");
  logits.backward(logit_seed);

  const std::size_t n = activation.dim(0), k = activation.dim(1), hh = activation.dim(2), ww = activation.dim(3);
  const std::size_t sample = k * hh * ww;
  const auto a = activation.data();
  const auto g = activation.grad();
  std::vector<Heatmap> maps;
  std::vector<double> av(sample), gv(sample);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(i * sample), sample, av.begin());
    if (g.empty()) {
      std::fill(gv.begin(), gv.end(), 0.0);
    } else {
      std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(i * sample), sample, gv.begin());
    }
    Heatmap h = cam_from_gradients(av, gv, k, hh, ww);
    h.target_layer = layer;
    maps.push_back(std::move(h));
  }
  return maps;
}

std::vector<Heatmap> grad_cam(models::Network<float>& net, const Tensor<float>& x,
                              const std::vector<std::size_t>& class_indices, const std::string& target_layer) {
  const std::size_t n = x.dim(0), classes = net.num_classes();
  if (class_indices.size() != n) throw std::invalid_argument("grad_cam: one class index per sample");
  std::vector<float> seed(n * classes, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    if (class_indices[i] >= classes) throw std::out_of_range("grad_cam: class index out of range");
    seed[i * classes + class_indices[i]] = 1.0f;
  }
  auto maps = grad_cam_seeded(net, x, seed, target_layer);
  for (std::size_t i = 0; i < n; ++i) maps[i].class_index = class_indices[i];
  return maps;
}

Heatmap grad_cam(models::Network<float>& net, const Tensor<float>& x, std::size_t class_index,
                 const std::string& target_layer) {
  if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("grad_cam: expected a single (1, C, H, W) input");
  return grad_cam(net, x, std::vector<std::size_t>{class_index}, target_layer).front();
}

std::vector<double> upsample_bilinear(std::span<const double> values, std::size_t height, std::size_t width,
                                      std::size_t out_height, std::size_t out_width) {
  if (values.size() != height * width || height == 0 || width == 0) {
    throw std::invalid_argument("upsample_bilinear: size mismatch");
  }
  auto axis = [](std::size_t o, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& frac) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5,
                                  0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    frac = src - static_cast<double>(i0);
  };
  std::vector<double> out(out_height * out_width);
  for (std::size_t oy = 0; oy < out_height; ++oy) {
    std::size_t y0, y1;
    double fy;
    axis(oy, height, out_height, y0, y1, fy);
    for (std::size_t ox = 0; ox < out_width; ++ox) {
      std::size_t x0, x1;
      double fx;
      axis(ox, width, out_width, x0, x1, fx);
      const double top = values[y0 * width + x0] * (1 - fx) + values[y0 * width + x1] * fx;
      const double bottom = values[y1 * width + x0] * (1 - fx) + values[y1 * width + x1] * fx;
      out[oy * out_width + ox] = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

std::array<double, 3> colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {t, 0.0, 1.0 - t};
}

std::vector<unsigned char> overlay(const Heatmap& heatmap, std::span<const float> base_image, std::size_t channels,
                                   std::size_t height, std::size_t width) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("overlay: base image needs 1 or 3 channels");
  if (base_image.size() != channels * height * width) throw std::invalid_argument("overlay: base image size mismatch");
  const double peak = heatmap.max();
  if (!std::isfinite(peak)) throw std::invalid_argument("overlay: heatmap is not normalisable");
  std::vector<double> up = upsample_bilinear(heatmap.values, heatmap.height, heatmap.width, height, width);
  const std::size_t plane = height * width;
  std::vector<unsigned char> rgb(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    const auto color = colormap(peak > 0.0 ? up[p] / peak : 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = std::clamp(static_cast<double>(base_image[(channels == 3 ? c : 0) * plane + p]), 0.0, 1.0);
      rgb[p * 3 + c] = static_cast<unsigned char>(std::lround(255.0 * (0.5 * base + 0.5 * color[c])));
    }
  }
  return rgb;
}

void write_png(const std::string& path, std::span<const unsigned char> rgb, std::size_t height, std::size_t width) {
  if (rgb.size() != height * width * 3) throw std::invalid_argument("write_png: buffer size mismatch");
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot write image '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed while encoding '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_write_row(png, rgb.data() + y * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void render_heatmap(const Heatmap& heatmap, std::span<const float> base_image, std::size_t channels,
                    std::size_t height, std::size_t width, const std::string& out_path) {
  write_png(out_path, overlay(heatmap, base_image, channels, height, width), height, width);
}

double heatmap_overlap(const Heatmap& a, const Heatmap& b) {
  if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
    throw std::invalid_argument("heatmap_overlap: maps differ in shape");
  }
  const double ma = a.max(), mb = b.max();
  if (ma == 0.0 && mb == 0.0) throw std::invalid_argument("heatmap_overlap: both maps are identically zero");
  if (ma == 0.0 || mb == 0.0) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double x = a.values[i] / ma, y = b.values[i] / mb;
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

double mean_overlap(models::Network<float>& a, models::Network<float>& b, const data::ImageDataset& ds,
                    const std::string& target_layer, std::size_t* skipped) {
  double total = 0.0;
  std::size_t counted = 0, zero_pairs = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += 128) {
    const std::size_t end = std::min(ds.size(), begin + 128);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<float> x = data::make_batch(ds, idx, {}, nullptr);
    const auto labels = data::batch_labels(ds, idx);
    const auto ha = grad_cam(a, x, labels, target_layer);
    const auto hb = grad_cam(b, x, labels, target_layer);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (ha[i].all_zero() && hb[i].all_zero()) {
        ++zero_pairs;
        continue;
      }
      total += heatmap_overlap(ha[i], hb[i]);
      ++counted;
    }
  }
  if (skipped != nullptr) *skipped = zero_pairs;
  if (counted == 0) throw std::runtime_error("mean_overlap: every heatmap pair was identically zero");
  return total / static_cast<double>(counted);
}

}  // namespace dpcn::xai
