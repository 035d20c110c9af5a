#include "dpcn/nn/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dpcn/core/ops.hpp"

namespace dpcn::nn {

std::size_t ConvSpec::output_extent(std::size_t in, std::size_t kernel) const {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (kernel == 0) throw std::invalid_argument("conv2d: kernel must be positive");
  if (in + 2 * padding < kernel) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(kernel) + " exceeds padded input " +
                                std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

// Largest im2col buffer materialised at once, in elements.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w, out_c, out_h, out_w, kh, kw, stride, pad;
  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  std::size_t chunk() const { return std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, patch() * positions())); }
};

// Output columns [lo, hi) whose input column ox * stride + k - pad lies
// inside [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t k, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  lo = pad > k ? (pad - k + stride - 1) / stride : 0;
  // Largest ox with ox * stride + k - pad <= in - 1.
  const std::size_t limit = in + pad - 1;
  hi = limit < k ? 0 : std::min(out, (limit - k) / stride + 1);
  if (lo > hi) lo = hi;
}

// Writes image `image` of `x` into columns [slot * P, (slot + 1) * P) of a
// (patch, chunk * P) matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t image, std::size_t slot, std::size_t width, T* col) {
  const std::size_t P = g.positions();
  const T* src = x + image * g.in_c * g.in_h * g.in_w;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * width + slot * P;
        std::size_t lo, hi;
        valid_range(g.out_w, g.in_w, g.stride, kj, g.pad, lo, hi);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* line = src + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + kj - g.pad;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(line + lo, line + hi, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = line[ox * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, std::size_t slot, std::size_t width, std::size_t image, T* dx) {
  const std::size_t P = g.positions();
  T* dst = dx + image * g.in_c * g.in_h * g.in_w;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * width + slot * P;
        std::size_t lo, hi;
        valid_range(g.out_w, g.in_w, g.stride, kj, g.pad, lo, hi);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          // Offset pointer; only indices in [lo, hi) are dereferenced.
          T* line = dst + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + kj - g.pad;
          const T* src = row + oy * g.out_w;
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) line[ox] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) line[ox * g.stride] += src[ox];
          }
        }
      }
    }
  }
}

// Fills `col` (patch, count * P) for images [first, first + count).
template <typename T>
void gather_columns(const ConvGeometry& g, const T* x, std::size_t first, std::size_t count, std::vector<T>& col) {
  const std::size_t width = count * g.positions();
  col.resize(g.patch() * width);
  for (std::size_t s = 0; s < count; ++s) im2col(g, x, first + s, s, width, col.data());
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, const ConvSpec& spec) {
  if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be NCHW, got " + to_string(input.shape()));
  if (input.dim(1) != spec.in_channels) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                                std::to_string(spec.in_channels));
  }
  const Shape expected_w{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (weights.shape() != expected_w) {
    throw std::invalid_argument("conv2d: weight shape " + to_string(weights.shape()) + ", expected " +
                                to_string(expected_w));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw std::invalid_argument("conv2d: bias shape " + to_string(bias.shape()));
  }

  ConvGeometry g{input.dim(0), spec.in_channels, input.dim(2), input.dim(3), spec.out_channels,
                 spec.output_extent(input.dim(2), spec.kernel_h), spec.output_extent(input.dim(3), spec.kernel_w),
                 spec.kernel_h, spec.kernel_w, spec.stride, spec.padding};
  const std::size_t P = g.positions();
  const std::size_t K = g.patch();
  const std::size_t O = g.out_c;
  std::vector<T> out(g.batch * O * P, T(0));
  const T* x = input.data().data();
  const T* w = weights.data().data();

  if (g.pointwise()) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      gemm(false, false, O, P, K, T(1), w, x + n * K * P, T(0), out.data() + n * O * P);
    }
  } else {
    std::vector<T> col, tmp;
    const std::size_t chunk = g.chunk();
    for (std::size_t first = 0; first < g.batch; first += chunk) {
      const std::size_t count = std::min(chunk, g.batch - first);
      gather_columns(g, x, first, count, col);
      if (count == 1) {
        gemm(false, false, O, P, K, T(1), w, col.data(), T(0), out.data() + first * O * P);
        continue;
      }
      tmp.assign(O * count * P, T(0));
      gemm(false, false, O, count * P, K, T(1), w, col.data(), T(0), tmp.data());
      for (std::size_t s = 0; s < count; ++s) {
        for (std::size_t o = 0; o < O; ++o) {
          const T* src = tmp.data() + o * count * P + s * P;
          std::copy(src, src + P, out.data() + ((first + s) * O + o) * P);
        }
      }
    }
  }
  if (bias.defined()) {
    const T* b = bias.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        T* dst = out.data() + (n * O + o) * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += b[o];
      }
    }
  }

  std::vector<Tensor<T>> inputs{input, weights};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      Shape{g.batch, O, g.out_h, g.out_w}, std::move(out), "conv2d", std::move(inputs),
      [input, weights, bias, g](const std::vector<T>& grad) {
        const std::size_t P = g.positions(), K = g.patch(), O = g.out_c;
        const T* x = input.data().data();
        const T* w = weights.data().data();
        if (bias.defined() && bias.requires_grad()) {
          std::vector<T> db(O, T(0));
          for (std::size_t n = 0; n < g.batch; ++n) {
            for (std::size_t o = 0; o < O; ++o) {
              const T* src = grad.data() + (n * O + o) * P;
              T acc = 0;
              for (std::size_t p = 0; p < P; ++p) acc += src[p];
              db[o] += acc;
            }
          }
          accumulate_grad<T>(bias, db);
        }
        const bool need_w = weights.requires_grad();
        const bool need_x = input.requires_grad();
        if (!need_w && !need_x) return;
        T* dw = need_w ? weights.impl()->ensure_grad().data() : nullptr;
        T* dx = need_x ? input.impl()->ensure_grad().data() : nullptr;

        if (g.pointwise()) {
          for (std::size_t n = 0; n < g.batch; ++n) {
            const T* gn = grad.data() + n * O * P;
            if (need_w) gemm(false, true, O, K, P, T(1), gn, x + n * K * P, T(1), dw);
            if (need_x) gemm(true, false, K, P, O, T(1), w, gn, T(1), dx + n * K * P);
          }
          return;
        }
        std::vector<T> col, gcol, dcol;
        const std::size_t chunk = g.chunk();
        for (std::size_t first = 0; first < g.batch; first += chunk) {
          const std::size_t count = std::min(chunk, g.batch - first);
          const std::size_t width = count * P;
          gcol.resize(O * width);
          for (std::size_t s = 0; s < count; ++s) {
            for (std::size_t o = 0; o < O; ++o) {
              const T* src = grad.data() + ((first + s) * O + o) * P;
              std::copy(src, src + P, gcol.data() + o * width + s * P);
            }
          }
          if (need_w) {
            gather_columns(g, x, first, count, col);
            gemm(false, true, O, K, width, T(1), gcol.data(), col.data(), T(1), dw);
          }
          if (need_x) {
            dcol.assign(K * width, T(0));
            gemm(true, false, K, width, O, T(1), w, gcol.data(), T(0), dcol.data());
            for (std::size_t s = 0; s < count; ++s) col2im(g, dcol.data(), s, width, first + s, dx);
          }
        }
      });
}

namespace {

// Branch-free forms; a data-dependent branch here mispredicts on roughly
// half of all zero-mean activations.
template <typename T>
inline T leaky(T v, T alpha) {
  return std::max(v, T(0)) + alpha * std::min(v, T(0));
}

template <typename T>
inline T leaky_slope(T v, T alpha) {
  return v > T(0) ? T(1) : alpha;
}

}  // namespace

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  std::vector<T> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = leaky(v[i], alpha);
  return make_result<T>(x.shape(), std::move(out), "leaky_relu", {x}, [x, alpha](const std::vector<T>& g) {
    auto v = x.data();
    auto& dst = x.impl()->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * leaky_slope(v[i], alpha);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (v[i] >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v[i]));
    } else {
      const T e = std::exp(v[i]);
      out[i] = e / (T(1) + e);
    }
  }
  auto y = out;
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x}, [x, y = std::move(y)](const std::vector<T>& g) {
    auto& dst = x.impl()->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
  BatchNormState<T> s;
  s.gamma = Tensor<T>(Shape{channels}, T(1), true);
  s.beta = Tensor<T>(Shape{channels}, T(0), true);
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  return s;
}

namespace {

// Eight independent partial sums so the reduction vectorises without
// reassociation flags.
template <typename T>
double plane_sum(const T* p, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += p[i + k];
  }
  double total = 0;
  for (; i < n; ++i) total += p[i];
  for (T a : acc) total += a;
  return total;
}

template <typename T>
double plane_sq_dev(const T* p, std::size_t n, T mu) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) {
      const T d = p[i + k] - mu;
      acc[k] += d * d;
    }
  }
  double total = 0;
  for (; i < n; ++i) total += static_cast<double>(p[i] - mu) * (p[i] - mu);
  for (T a : acc) total += a;
  return total;
}

template <typename T>
Tensor<T> batch_norm_impl(const Tensor<T>& x, BatchNormState<T>& state, bool act, T alpha) {
  if (x.rank() < 2) throw std::invalid_argument("batch_norm: expects (N, C, ...)");
  const std::size_t N = x.dim(0), C = x.dim(1);
  if (C != state.channels() || state.gamma.numel() != C || state.beta.numel() != C) {
    throw std::invalid_argument("batch_norm: channel count " + std::to_string(C) + " does not match state " +
                                std::to_string(state.channels()));
  }
  if (!(state.epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  const std::size_t inner = x.numel() / (N * C);
  const std::size_t M = N * inner;
  const bool train = state.mode == BatchNormMode::kTrain;
  if (train && M < 2) throw std::invalid_argument("batch_norm: train mode needs more than one value per channel");

  auto v = x.data();
  std::vector<T> mean(C), inv_std(C);
  if (train) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0;
      for (std::size_t n = 0; n < N; ++n) acc += plane_sum(v.data() + (n * C + c) * inner, inner);
      const double mu = acc / static_cast<double>(M);
      double sq = 0;
      for (std::size_t n = 0; n < N; ++n) sq += plane_sq_dev(v.data() + (n * C + c) * inner, inner, static_cast<T>(mu));
      const double var = sq / static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      if (state.update_running_stats) {
        const double unbiased = sq / static_cast<double>(M - 1);
        const double m = state.momentum;
        state.running_mean[c] = static_cast<T>((1.0 - m) * state.running_mean[c] + m * mu);
        state.running_var[c] = static_cast<T>((1.0 - m) * state.running_var[c] + m * unbiased);
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.epsilon));
    }
  }

  auto gamma = state.gamma.data();
  auto beta = state.beta.data();
  std::vector<T> out(x.numel());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * inner;
      // y = gamma * (x - mean) * inv_std + beta folded into one multiply-add.
      const T k = gamma[c] * inv_std[c];
      const T b = beta[c] - k * mean[c];
      const T* src = v.data() + base;
      T* dst = out.data() + base;
      if (act) {
        for (std::size_t i = 0; i < inner; ++i) {
          const T y = k * src[i] + b;
          dst[i] = leaky(y, alpha);
        }
      } else {
        for (std::size_t i = 0; i < inner; ++i) dst[i] = k * src[i] + b;
      }
    }
  }

  Tensor<T> g_t = state.gamma, b_t = state.beta;
  return make_result<T>(
      x.shape(), std::move(out), act ? "batch_norm_leaky_relu" : "batch_norm", {x, g_t, b_t},
      [x, g_t, b_t, mean = std::move(mean), inv_std = std::move(inv_std), train, act, alpha, N, C, inner,
       M](const std::vector<T>& g) {
        const T* v = x.data().data();
        auto gamma = g_t.data();
        auto beta = b_t.data();
        // The activation mask is recomputed from x in each pass instead of
        // materialising the gradient with respect to the normalised output.
        const T slope = act ? alpha : T(1);
        std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            const T k = gamma[c] * inv_std[c];
            const T b = beta[c] - k * mean[c];
            const T mu = mean[c];
            const T* xs = v + base;
            const T* gs = g.data() + base;
            T a[8] = {}, h[8] = {};
            std::size_t i = 0;
            for (; i + 8 <= inner; i += 8) {
              for (std::size_t j = 0; j < 8; ++j) {
                const T gj = gs[i + j] * (k * xs[i + j] + b > T(0) ? T(1) : slope);
                a[j] += gj;
                h[j] += gj * (xs[i + j] - mu);
              }
            }
            T ta = 0, th = 0;
            for (; i < inner; ++i) {
              const T gi = gs[i] * (k * xs[i] + b > T(0) ? T(1) : slope);
              ta += gi;
              th += gi * (xs[i] - mu);
            }
            for (std::size_t j = 0; j < 8; ++j) {
              ta += a[j];
              th += h[j];
            }
            sum_g[c] += ta;
            sum_gx[c] += th * inv_std[c];
          }
        }
        if (g_t.requires_grad()) accumulate_grad<T>(g_t, sum_gx);
        if (b_t.requires_grad()) accumulate_grad<T>(b_t, sum_g);
        if (!x.requires_grad()) return;
        T* dx = x.impl()->ensure_grad().data();
        const T inv_m = T(1) / static_cast<T>(M);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            const T k = gamma[c] * inv_std[c];
            const T b = beta[c] - k * mean[c];
            const T* xs = v + base;
            const T* gs = g.data() + base;
            T* d = dx + base;
            // Train: dx = k (g - mean(g) - xhat mean(g xhat)), expanded in x.
            const T mh = train ? inv_m * sum_gx[c] * inv_std[c] : T(0);
            const T off = train ? -inv_m * sum_g[c] + mean[c] * mh : T(0);
            for (std::size_t i = 0; i < inner; ++i) {
              const T gi = gs[i] * (k * xs[i] + b > T(0) ? T(1) : slope);
              d[i] += k * (gi + off - xs[i] * mh);
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state) {
  return batch_norm_impl(x, state, false, T(0));
}

template <typename T>
Tensor<T> batch_norm_leaky_relu(const Tensor<T>& x, BatchNormState<T>& state, T alpha) {
  return batch_norm_impl(x, state, true, alpha);
}

template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind, std::size_t window, std::size_t stride) {
  if (x.rank() != 4) throw std::invalid_argument("pool: input must be NCHW");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kind == PoolKind::kGlobalAvg) {
    std::vector<T> out(N * C);
    auto v = x.data();
    const std::size_t plane = H * W;
    for (std::size_t i = 0; i < N * C; ++i) {
      T acc = 0;
      for (std::size_t p = 0; p < plane; ++p) acc += v[i * plane + p];
      out[i] = acc / static_cast<T>(plane);
    }
    return make_result<T>(Shape{N, C, 1, 1}, std::move(out), "global_avg_pool", {x},
                          [x, plane](const std::vector<T>& g) {
                            auto& dx = x.impl()->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const T share = g[i] / static_cast<T>(plane);
                              for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] += share;
                            }
                          });
  }
  if (window == 0 || stride == 0) throw std::invalid_argument("pool: window and stride must be positive");
  if (window > H || window > W) {
    throw std::invalid_argument("pool: window " + std::to_string(window) + " larger than input " +
                                std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t Ho = (H - window) / stride + 1;
  const std::size_t Wo = (W - window) / stride + 1;
  auto v = x.data();
  std::vector<T> out(N * C * Ho * Wo);
  const bool is_max = kind == PoolKind::kMax;
  std::vector<std::size_t> argmax(is_max ? out.size() : 0);
  const T inv_area = T(1) / static_cast<T>(window * window);
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const T* src = v.data() + plane * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t o = (plane * Ho + oy) * Wo + ox;
        if (is_max) {
          std::size_t best = (oy * stride) * W + ox * stride;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = (oy * stride + ky) * W + ox * stride + kx;
              if (src[idx] > src[best]) best = idx;
            }
          }
          out[o] = src[best];
          argmax[o] = plane * H * W + best;
        } else {
          T acc = 0;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) acc += src[(oy * stride + ky) * W + ox * stride + kx];
          }
          out[o] = acc * inv_area;
        }
      }
    }
  }
  const char* name = is_max ? "max_pool" : "avg_pool";
  return make_result<T>(Shape{N, C, Ho, Wo}, std::move(out), name, {x},
                        [x, is_max, argmax = std::move(argmax), N, C, H, W, Ho, Wo, window, stride,
                         inv_area](const std::vector<T>& g) {
                          auto& dx = x.impl()->ensure_grad();
                          if (is_max) {
                            for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
                            return;
                          }
                          for (std::size_t plane = 0; plane < N * C; ++plane) {
                            for (std::size_t oy = 0; oy < Ho; ++oy) {
                              for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const T share = g[(plane * Ho + oy) * Wo + ox] * inv_area;
                                for (std::size_t ky = 0; ky < window; ++ky) {
                                  for (std::size_t kx = 0; kx < window; ++kx) {
                                    dx[plane * H * W + (oy * stride + ky) * W + ox * stride + kx] += share;
                                  }
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return flatten(pool(x, PoolKind::kGlobalAvg));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2 || weights.rank() != 2 || x.dim(1) != weights.dim(0)) {
    throw std::invalid_argument("linear: incompatible shapes " + to_string(x.shape()) + " x " +
                                to_string(weights.shape()));
  }
  const std::size_t N = x.dim(0), F = x.dim(1), C = weights.dim(1);
  if (bias.defined() && bias.shape() != Shape{C}) {
    throw std::invalid_argument("linear: bias shape " + to_string(bias.shape()) + " for " + std::to_string(C) +
                                " outputs");
  }
  std::vector<T> out(N * C, T(0));
  if (bias.defined()) {
    for (std::size_t n = 0; n < N; ++n) std::copy(bias.data().begin(), bias.data().end(), out.begin() + n * C);
  }
  gemm(false, false, N, C, F, T(1), x.data().data(), weights.data().data(), T(1), out.data());
  std::vector<Tensor<T>> inputs{x, weights};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(Shape{N, C}, std::move(out), "linear", std::move(inputs),
                        [x, weights, bias, N, F, C](const std::vector<T>& g) {
                          if (x.requires_grad()) {
                            gemm(false, true, N, F, C, T(1), g.data(), weights.data().data(), T(1),
                                 x.impl()->ensure_grad().data());
                          }
                          if (weights.requires_grad()) {
                            gemm(true, false, F, C, N, T(1), x.data().data(), g.data(), T(1),
                                 weights.impl()->ensure_grad().data());
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            std::vector<T> db(C, T(0));
                            for (std::size_t n = 0; n < N; ++n) {
                              for (std::size_t c = 0; c < C; ++c) db[c] += g[n * C + c];
                            }
                            accumulate_grad<T>(bias, db);
                          }
                        });
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: expects (N, C)");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<T> p(N * C);
  auto v = logits.data();
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = v.data() + n * C;
    const T peak = *std::max_element(row, row + C);
    T total = 0;
    for (std::size_t c = 0; c < C; ++c) {
      p[n * C + c] = std::exp(row[c] - peak);
      total += p[n * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) p[n * C + c] /= total;
  }
  return p;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be (N, C)");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) throw std::invalid_argument("softmax_cross_entropy: label count does not match batch");
  for (auto y : labels) {
    if (y >= C) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(C) + ")");
    }
  }
  auto v = logits.data();
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = v.data() + n * C;
    const double peak = *std::max_element(row, row + C);
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(row[c]) - peak);
    total += peak + std::log(s) - static_cast<double>(row[labels[n]]);
  }
  const T loss = static_cast<T>(total / static_cast<double>(N));
  return make_result<T>(Shape{1}, {loss}, "softmax_cross_entropy", {logits},
                        [logits, labels, N, C](const std::vector<T>& g) {
                          auto p = softmax_rows(logits);
                          const T k = g[0] / static_cast<T>(N);
                          for (std::size_t n = 0; n < N; ++n) p[n * C + labels[n]] -= T(1);
                          for (auto& e : p) e *= k;
                          accumulate_grad<T>(logits, p);
                        });
}

template <typename T>
Tensor<T> disc_l2_loss(const Tensor<T>& d_out, T target) {
  if (!d_out.defined()) throw std::invalid_argument("disc_l2_loss: empty batch");
  if (!std::isfinite(static_cast<double>(target))) throw std::invalid_argument("disc_l2_loss: target must be finite");
  if (d_out.numel() != d_out.dim(0)) {
    throw std::invalid_argument("disc_l2_loss: expects one score per sample, got " + to_string(d_out.shape()));
  }
  const std::size_t N = d_out.numel();
  auto v = d_out.data();
  double acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double d = static_cast<double>(target) - static_cast<double>(v[i]);
    acc += d * d;
  }
  const T loss = static_cast<T>(acc / static_cast<double>(N));
  return make_result<T>(Shape{1}, {loss}, "disc_l2_loss", {d_out}, [d_out, target, N](const std::vector<T>& g) {
    auto v = d_out.data();
    auto& dx = d_out.impl()->ensure_grad();
    const T k = T(2) * g[0] / static_cast<T>(N);
    for (std::size_t i = 0; i < N; ++i) dx[i] += k * (v[i] - target);
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto& ref = parts[0].shape();
  if (ref.size() < 2) throw std::invalid_argument("concat_channels: inputs need a channel axis");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t a = 2; ok && a < s.size(); ++a) ok = s[a] == ref[a];
    if (!ok) {
      throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(ref) + " and " + to_string(s));
    }
    channels += s[1];
  }
  const std::size_t N = ref[0];
  const std::size_t inner = numel(ref) / (ref[0] * ref[1]);
  Shape shape = ref;
  shape[1] = channels;
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(1) * inner;
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(p.data().begin() + n * block, block, out.begin() + n * channels * inner + offset);
    }
    offset += block;
  }
  return make_result<T>(std::move(shape), std::move(out), "concat_channels", parts,
                        [parts, N, channels, inner](const std::vector<T>& g) {
                          std::size_t offset = 0;
                          for (const auto& p : parts) {
                            const std::size_t block = p.dim(1) * inner;
                            if (p.requires_grad()) {
                              auto& dx = p.impl()->ensure_grad();
                              for (std::size_t n = 0; n < N; ++n) {
                                const T* src = g.data() + n * channels * inner + offset;
                                for (std::size_t i = 0; i < block; ++i) dx[n * block + i] += src[i];
                              }
                            }
                            offset += block;
                          }
                        });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 2 || begin >= end || end > x.dim(1)) throw std::invalid_argument("slice_channels: bad range");
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t inner = x.numel() / (N * C);
  Shape shape = x.shape();
  shape[1] = end - begin;
  const std::size_t block = (end - begin) * inner;
  std::vector<T> out(N * block);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.data().begin() + (n * C + begin) * inner, block, out.begin() + n * block);
  }
  return make_result<T>(std::move(shape), std::move(out), "slice_channels", {x},
                        [x, N, C, begin, inner, block](const std::vector<T>& g) {
                          auto& dx = x.impl()->ensure_grad();
                          for (std::size_t n = 0; n < N; ++n) {
                            for (std::size_t i = 0; i < block; ++i) dx[(n * C + begin) * inner + i] += g[n * block + i];
                          }
                        });
}

template <typename T>
Tensor<T> sum_features(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("sum_features: no inputs");
  Tensor<T> total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].shape() != parts[0].shape()) {
      throw std::invalid_argument("sum_features: shape mismatch " + to_string(parts[0].shape()) + " vs " +
                                  to_string(parts[i].shape()));
    }
    total = add(total, parts[i]);
  }
  return parts.size() == 1 ? reshape(total, total.shape()) : total;
}

#define DPCN_INSTANTIATE(T)                                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);   \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                       \
  template struct BatchNormState<T>;                                                                  \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNormState<T>&);                                \
  template Tensor<T> batch_norm_leaky_relu(const Tensor<T>&, BatchNormState<T>&, T);                  \
  template Tensor<T> pool(const Tensor<T>&, PoolKind, std::size_t, std::size_t);                      \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                               \
  template Tensor<T> flatten(const Tensor<T>&);                                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template std::vector<T> softmax_rows(const Tensor<T>&);                                             \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);        \
  template Tensor<T> disc_l2_loss(const Tensor<T>&, T);                                               \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                  \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> sum_features(const std::vector<Tensor<T>>&);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::nn
