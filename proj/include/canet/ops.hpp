#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <vector>

#include "canet/gemm.hpp"
#include "canet/tensor.hpp"

namespace canet {

struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool has_bias = false;

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0) {
      throw std::invalid_argument("ConvSpec: channel counts and kernel taps must be >= 1");
    }
    if (stride < 1) throw std::invalid_argument("ConvSpec: stride must be >= 1");
    if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw std::invalid_argument("ConvSpec: groups=" + std::to_string(groups) +
                                  " must divide in_channels=" + std::to_string(in_channels) +
                                  " and out_channels=" + std::to_string(out_channels));
    }
  }

  std::size_t out_dim(std::size_t in) const {
    std::size_t padded = in + 2 * padding;
    std::size_t k = kernel_h;  // callers with kh != kw use out_h/out_w
    if (padded < k) throw std::invalid_argument("ConvSpec: kernel larger than padded input");
    return (padded - k) / stride + 1;
  }
  std::size_t out_h(std::size_t h) const {
    std::size_t padded = h + 2 * padding;
    if (padded < kernel_h) throw std::invalid_argument("ConvSpec: kernel_h larger than padded input");
    return (padded - kernel_h) / stride + 1;
  }
  std::size_t out_w(std::size_t w) const {
    std::size_t padded = w + 2 * padding;
    if (padded < kernel_w) throw std::invalid_argument("ConvSpec: kernel_w larger than padded input");
    return (padded - kernel_w) / stride + 1;
  }
};

namespace detail {

// Unpacks one sample's (channels,h,w) slice into the (channels*kh*kw, out_h*out_w)
// patch matrix used by the GEMM formulation. Zero padding.
template <typename T>
void im2col(const T* src, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* col) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = src + c * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src_row = plane + iy * W;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= W) ? T{0} : src_row[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto the (channels,h,w) slice.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
                std::size_t out_w, T* dst) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = dst + c * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= H) continue;
          T* dst_row = plane + iy * W;
          const T* src_row = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < W) dst_row[ix] += src_row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_depthwise(const ConvSpec& s) {
  return s.groups == s.in_channels && s.out_channels == s.in_channels && s.groups > 1;
}

}  // namespace detail

template <typename T>
void validate_conv_args(const Tensor<T>& input, const Tensor<T>& weights,
                        const Tensor<T>* bias, const ConvSpec& spec) {
  spec.validate();
  check_rank(input, 4, "conv2d input");
  if (input.dim(1) != spec.in_channels) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.dim(1)) +
                                " channels, spec expects " + std::to_string(spec.in_channels));
  }
  std::vector<std::size_t> wshape{spec.out_channels, spec.in_channels / spec.groups, spec.kernel_h,
                                  spec.kernel_w};
  check_shape(weights, wshape, "conv2d weights");
  if (spec.has_bias) {
    if (!bias) throw std::invalid_argument("conv2d: spec has bias but none was given");
    check_shape(*bias, {spec.out_channels}, "conv2d bias");
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>* bias, const ConvSpec& spec) {
  validate_conv_args(input, weights, bias, spec);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const std::size_t cin_g = spec.in_channels / spec.groups;
  const std::size_t cout_g = spec.out_channels / spec.groups;
  Tensor<T> out({n, spec.out_channels, oh, ow});

  if (detail::is_depthwise<T>(spec)) {
    // One plane per channel, direct accumulation.
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < spec.in_channels; ++c) {
        const T* plane = input.data() + (s * spec.in_channels + c) * h * w;
        const T* ker = weights.data() + c * spec.kernel_h * spec.kernel_w;
        T* dst = out.data() + (s * spec.in_channels + c) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            T acc{0};
            for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ki) -
                                  static_cast<std::ptrdiff_t>(spec.padding);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kj) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
                if (ix < 0 || ix >= W) continue;
                acc += ker[ki * spec.kernel_w + kj] * plane[iy * W + ix];
              }
            }
            dst[oy * ow + ox] = acc;
          }
        }
        if (spec.has_bias) {
          T b = (*bias)[c];
          for (std::size_t i = 0; i < oh * ow; ++i) dst[i] += b;
        }
      }
    }
    return out;
  }

  const std::size_t k_rows = cin_g * spec.kernel_h * spec.kernel_w;
  const std::size_t cols = oh * ow;
  const bool identity_cols =
      spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0;
  std::vector<T> col(identity_cols ? 0 : k_rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t g = 0; g < spec.groups; ++g) {
      const T* src = input.data() + (s * spec.in_channels + g * cin_g) * h * w;
      const T* colp = src;
      if (!identity_cols) {
        detail::im2col(src, cin_g, h, w, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding,
                       oh, ow, col.data());
        colp = col.data();
      }
      T* dst = out.data() + (s * spec.out_channels + g * cout_g) * cols;
      gemm<T>(false, false, cout_g, cols, k_rows, T{1},
              weights.data() + g * cout_g * k_rows, k_rows, colp, cols, T{0}, dst, cols);
    }
    if (spec.has_bias) {
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        T b = (*bias)[c];
        T* dst = out.data() + (s * spec.out_channels + c) * cols;
        for (std::size_t i = 0; i < cols; ++i) dst[i] += b;
      }
    }
  }
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::optional<Tensor<T>> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const ConvSpec& spec, const Tensor<T>& upstream) {
  ConvSpec nobias = spec;
  nobias.has_bias = false;
  validate_conv_args<T>(input, weights, nullptr, nobias);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  check_shape(upstream, {n, spec.out_channels, oh, ow}, "conv2d upstream gradient");

  Conv2dGrads<T> grads;
  grads.input = Tensor<T>({n, spec.in_channels, h, w});
  grads.weights = Tensor<T>(weights.shape());
  if (spec.has_bias) {
    Tensor<T> gb({spec.out_channels});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        const T* g = upstream.data() + (s * spec.out_channels + c) * oh * ow;
        T acc{0};
        for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
        gb[c] += acc;
      }
    grads.bias = std::move(gb);
  }

  if (detail::is_depthwise<T>(spec)) {
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    for (std::size_t s = 0; s < n; ++s) {
#pragma omp parallel for schedule(static)
      for (std::size_t c = 0; c < spec.in_channels; ++c) {
        const T* plane = input.data() + (s * spec.in_channels + c) * h * w;
        const T* gout = upstream.data() + (s * spec.in_channels + c) * oh * ow;
        const T* ker = weights.data() + c * spec.kernel_h * spec.kernel_w;
        T* gin = grads.input.data() + (s * spec.in_channels + c) * h * w;
        T* gw = grads.weights.data() + c * spec.kernel_h * spec.kernel_w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            T g = gout[oy * ow + ox];
            if (g == T{0}) continue;
            for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ki) -
                                  static_cast<std::ptrdiff_t>(spec.padding);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kj) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
                if (ix < 0 || ix >= W) continue;
                gin[iy * W + ix] += ker[ki * spec.kernel_w + kj] * g;
                gw[ki * spec.kernel_w + kj] += plane[iy * W + ix] * g;
              }
            }
          }
        }
      }
    }
    return grads;
  }

  const std::size_t cin_g = spec.in_channels / spec.groups;
  const std::size_t cout_g = spec.out_channels / spec.groups;
  const std::size_t k_rows = cin_g * spec.kernel_h * spec.kernel_w;
  const std::size_t cols = oh * ow;
  const bool identity_cols =
      spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0;
  std::vector<T> col(identity_cols ? 0 : k_rows * cols);
  std::vector<T> col_grad(identity_cols ? 0 : k_rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t g = 0; g < spec.groups; ++g) {
      const T* src = input.data() + (s * spec.in_channels + g * cin_g) * h * w;
      const T* gout = upstream.data() + (s * spec.out_channels + g * cout_g) * cols;
      const T* wg = weights.data() + g * cout_g * k_rows;
      T* gw = grads.weights.data() + g * cout_g * k_rows;
      const T* colp = src;
      if (!identity_cols) {
        detail::im2col(src, cin_g, h, w, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding,
                       oh, ow, col.data());
        colp = col.data();
      }
      // dW += dY * col^T
      gemm<T>(false, true, cout_g, k_rows, cols, T{1}, gout, cols, colp, cols, T{1}, gw, k_rows);
      // dCol = W^T * dY
      T* gin = grads.input.data() + (s * spec.in_channels + g * cin_g) * h * w;
      if (identity_cols) {
        gemm<T>(true, false, k_rows, cols, cout_g, T{1}, wg, k_rows, gout, cols, T{1}, gin, cols);
      } else {
        gemm<T>(true, false, k_rows, cols, cout_g, T{1}, wg, k_rows, gout, cols, T{0},
                col_grad.data(), cols);
        detail::col2im_add(col_grad.data(), cin_g, h, w, spec.kernel_h, spec.kernel_w, spec.stride,
                           spec.padding, oh, ow, gin);
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormCache {
  bool training = false;
  std::vector<T> mean;     // per channel, stats used for normalization
  std::vector<T> inv_std;  // 1/sqrt(var+eps)
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                            const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, bool training, T momentum, T epsilon,
                            BatchNormCache<T>* cache = nullptr) {
  if (!(epsilon > T{0})) throw std::invalid_argument("batchnorm: epsilon must be positive");
  check_rank(input, 4, "batchnorm input");
  const std::size_t c = input.dim(1);
  check_shape(gamma, {c}, "batchnorm gamma");
  check_shape(beta, {c}, "batchnorm beta");
  check_shape(running_mean, {c}, "batchnorm running_mean");
  check_shape(running_var, {c}, "batchnorm running_var");

  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t plane = h * w;
  const std::size_t m = n * plane;
  Tensor<T> out(input.shape());
  std::vector<T> mean(c), inv_std(c);

  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = input.data() + (s * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double v = static_cast<double>(p[i]);
          sum += v;
          sq += v * v;
        }
      }
      double mu = sum / static_cast<double>(m);
      double var = sq / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;  // guard against rounding
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
      double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean[ch] = (T{1} - momentum) * running_mean[ch] + momentum * static_cast<T>(mu);
      running_var[ch] = (T{1} - momentum) * running_var[ch] + momentum * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var[ch]) + static_cast<double>(epsilon)));
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = input.data() + (s * c + ch) * plane;
      T* dst = out.data() + (s * c + ch) * plane;
      const T a = gamma[ch] * inv_std[ch];
      const T b = beta[ch] - a * mean[ch];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
    }
  }

  if (cache) {
    cache->training = training;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const Tensor<T>& gamma,
                                     const BatchNormCache<T>& cache, const Tensor<T>& upstream) {
  check_rank(input, 4, "batchnorm input");
  if (!upstream.same_shape(input)) {
    throw std::invalid_argument("batchnorm backward: upstream shape " + upstream.shape_str() +
                                " != input shape " + input.shape_str());
  }
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  const double m = static_cast<double>(n * plane);

  BatchNormGrads<T> g;
  g.input = Tensor<T>(input.shape());
  g.gamma = Tensor<T>({c});
  g.beta = Tensor<T>({c});

  for (std::size_t ch = 0; ch < c; ++ch) {
    const T mu = cache.mean[ch];
    const T is = cache.inv_std[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = input.data() + (s * c + ch) * plane;
      const T* dy = upstream.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double xh = static_cast<double>((x[i] - mu) * is);
        sum_dy += static_cast<double>(dy[i]);
        sum_dy_xhat += static_cast<double>(dy[i]) * xh;
      }
    }
    g.beta[ch] = static_cast<T>(sum_dy);
    g.gamma[ch] = static_cast<T>(sum_dy_xhat);
    const double a = static_cast<double>(gamma[ch]) * static_cast<double>(is);
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = input.data() + (s * c + ch) * plane;
      const T* dy = upstream.data() + (s * c + ch) * plane;
      T* dx = g.input.data() + (s * c + ch) * plane;
      if (cache.training) {
        for (std::size_t i = 0; i < plane; ++i) {
          double xh = static_cast<double>((x[i] - mu) * is);
          dx[i] = static_cast<T>(a * (static_cast<double>(dy[i]) - sum_dy / m - xh * sum_dy_xhat / m));
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = static_cast<T>(a * static_cast<double>(dy[i]));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations. Backward functions take the forward OUTPUT.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& upstream) {
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] > T{0} ? upstream[i] : T{0};
  return g;
}

template <typename T>
Tensor<T> relu6_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i], T{0}), T{6});
  return out;
}

template <typename T>
Tensor<T> relu6_backward(const Tensor<T>& output, const Tensor<T>& upstream) {
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    g[i] = (output[i] > T{0} && output[i] < T{6}) ? upstream[i] : T{0};
  return g;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) {
    T e = std::exp(-x);
    return T{1} / (T{1} + e);
  }
  T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& upstream) {
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    g[i] = upstream[i] * output[i] * (T{1} - output[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Global average pooling: (N,C,H,W) -> (N,C)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_rank(x, 4, "global_avg_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw std::invalid_argument("global_avg_pool: empty spatial dims");
  Tensor<T> z({n, c});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (s * c + ch) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      z.at(s, ch) = static_cast<T>(acc / static_cast<double>(plane));
    }
  return z;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& upstream, std::size_t h, std::size_t w) {
  check_rank(upstream, 2, "global_avg_pool upstream");
  const std::size_t n = upstream.dim(0), c = upstream.dim(1);
  Tensor<T> g({n, c, h, w});
  const T scale = T{1} / static_cast<T>(h * w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T v = upstream.at(s, ch) * scale;
      T* p = g.data() + (s * c + ch) * h * w;
      std::fill(p, p + h * w, v);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b, x:(N,Cin), W:(Cout,Cin), b:(Cout)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>* bias) {
  check_rank(x, 2, "linear input");
  check_rank(weights, 2, "linear weights");
  if (x.dim(1) != weights.dim(1)) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.dim(1)) +
                                " != weight fan-in " + std::to_string(weights.dim(1)));
  }
  if (bias) check_shape(*bias, {weights.dim(0)}, "linear bias");
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weights.dim(0);
  Tensor<T> y({n, cout});
  gemm<T>(false, true, n, cout, cin, T{1}, x.data(), cin, weights.data(), cin, T{0}, y.data(),
          cout);
  if (bias) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < cout; ++c) y.at(s, c) += (*bias)[c];
  }
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weights,
                               const Tensor<T>& upstream) {
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weights.dim(0);
  check_shape(upstream, {n, cout}, "linear upstream");
  LinearGrads<T> g;
  g.input = Tensor<T>({n, cin});
  g.weights = Tensor<T>({cout, cin});
  g.bias = Tensor<T>({cout});
  gemm<T>(false, false, n, cin, cout, T{1}, upstream.data(), cout, weights.data(), cin, T{0},
          g.input.data(), cin);
  gemm<T>(true, false, cout, cin, n, T{1}, upstream.data(), cout, x.data(), cin, T{0},
          g.weights.data(), cin);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < cout; ++c) g.bias[c] += upstream.at(s, c);
  return g;
}

// ---------------------------------------------------------------------------
// 1D convolution over the channel descriptor, optionally split into g
// contiguous segments that share the same filter. Zero same-padding; taps
// never cross a segment boundary.
// kernel shape: (k) for a shared filter, (g,k) for per-group filters.
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void validate_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t groups,
                     std::size_t& k, bool& per_group) {
  check_rank(x, 2, "grouped_conv1d input");
  if (groups == 0) throw std::invalid_argument("grouped_conv1d: groups must be >= 1");
  if (x.dim(1) % groups != 0) {
    throw std::invalid_argument("grouped_conv1d: channels " + std::to_string(x.dim(1)) +
                                " not divisible by groups " + std::to_string(groups));
  }
  if (kernel.rank() == 1) {
    per_group = false;
    k = kernel.dim(0);
  } else if (kernel.rank() == 2) {
    per_group = true;
    if (kernel.dim(0) != groups) {
      throw std::invalid_argument("grouped_conv1d: per-group kernel has " +
                                  std::to_string(kernel.dim(0)) + " filters, groups=" +
                                  std::to_string(groups));
    }
    k = kernel.dim(1);
  } else {
    throw std::invalid_argument("grouped_conv1d: kernel must be rank 1 or 2, got " +
                                kernel.shape_str());
  }
  if (k % 2 == 0) throw std::invalid_argument("grouped_conv1d: kernel size must be odd, got " +
                                              std::to_string(k));
}
}  // namespace detail

template <typename T>
Tensor<T> grouped_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t groups) {
  std::size_t k = 0;
  bool per_group = false;
  detail::validate_conv1d(x, kernel, groups, k, per_group);
  const std::size_t n = x.dim(0), c = x.dim(1), seg = c / groups;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<T> y({n, c});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t g = 0; g < groups; ++g) {
      const T* ker = kernel.data() + (per_group ? g * k : 0);
      const T* src = x.data() + s * c + g * seg;
      T* dst = y.data() + s * c + g * seg;
      for (std::size_t i = 0; i < seg; ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
          if (j >= 0 && j < static_cast<std::ptrdiff_t>(seg))
            acc += static_cast<double>(ker[t]) * static_cast<double>(src[j]);
        }
        dst[i] = static_cast<T>(acc);
      }
    }
  }
  return y;
}

template <typename T>
struct Conv1dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
};

template <typename T>
Conv1dGrads<T> grouped_conv1d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                       std::size_t groups, const Tensor<T>& upstream) {
  std::size_t k = 0;
  bool per_group = false;
  detail::validate_conv1d(x, kernel, groups, k, per_group);
  if (!upstream.same_shape(x)) {
    throw std::invalid_argument("grouped_conv1d backward: upstream shape " + upstream.shape_str() +
                                " != input shape " + x.shape_str());
  }
  const std::size_t n = x.dim(0), c = x.dim(1), seg = c / groups;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  Conv1dGrads<T> g;
  g.input = Tensor<T>({n, c});
  g.kernel = Tensor<T>(kernel.shape());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T* ker = kernel.data() + (per_group ? gi * k : 0);
      T* gker = g.kernel.data() + (per_group ? gi * k : 0);
      const T* src = x.data() + s * c + gi * seg;
      const T* up = upstream.data() + s * c + gi * seg;
      T* gin = g.input.data() + s * c + gi * seg;
      for (std::size_t i = 0; i < seg; ++i) {
        const T u = up[i];
        for (std::size_t t = 0; t < k; ++t) {
          std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
          if (j >= 0 && j < static_cast<std::ptrdiff_t>(seg)) {
            gin[j] += ker[t] * u;
            gker[t] += src[j] * u;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Per-channel scaling: y[n,c,:,:] = s[n,c] * x[n,c,:,:]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  check_rank(x, 4, "channel_scale input");
  check_shape(s, {x.dim(0), x.dim(1)}, "channel_scale scale");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = s.at(i, ch);
      const T* src = x.data() + (i * c + ch) * plane;
      T* dst = y.data() + (i * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = v * src[p];
    }
  return y;
}

template <typename T>
struct ChannelScaleGrads {
  Tensor<T> input;  // (N,C,H,W)
  Tensor<T> scale;  // (N,C)
};

template <typename T>
ChannelScaleGrads<T> channel_scale_backward(const Tensor<T>& x, const Tensor<T>& s,
                                            const Tensor<T>& upstream) {
  check_shape(upstream, x.shape(), "channel_scale upstream");
  check_shape(s, {x.dim(0), x.dim(1)}, "channel_scale scale");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  ChannelScaleGrads<T> g;
  g.input = Tensor<T>(x.shape());
  g.scale = Tensor<T>({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = s.at(i, ch);
      const T* src = x.data() + (i * c + ch) * plane;
      const T* up = upstream.data() + (i * c + ch) * plane;
      T* dst = g.input.data() + (i * c + ch) * plane;
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        dst[p] = v * up[p];
        acc += static_cast<double>(up[p]) * static_cast<double>(src[p]);
      }
      g.scale.at(i, ch) = static_cast<T>(acc);
    }
  return g;
}

// Elementwise add of two same-shape tensors (residual joins).
template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace canet
