#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "canet/ops.hpp"
#include "canet/tensor.hpp"

namespace canet {

enum class AttentionKind { None, Se, Eca, Lca };

inline std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::None: return "none";
    case AttentionKind::Se: return "se";
    case AttentionKind::Eca: return "eca";
    case AttentionKind::Lca: return "lca";
  }
  throw std::invalid_argument("unknown AttentionKind");
}

inline AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "se") return AttentionKind::Se;
  if (s == "eca") return AttentionKind::Eca;
  if (s == "lca") return AttentionKind::Lca;
  throw std::invalid_argument("unknown attention kind '" + s +
                              "' (expected none|se|eca|lca)");
}

struct AttentionSpec {
  AttentionKind kind = AttentionKind::None;
  std::size_t reduction = 16;      // SE bottleneck divisor
  double gamma = 2.0;              // adaptive kernel: slope term
  double b = 1.0;                  // adaptive kernel: offset term
  std::size_t groups = 4;          // LCA segment count
  bool per_group_filters = false;  // LCA: one filter per segment instead of a shared one

  void validate() const {
    if (kind == AttentionKind::Se && reduction == 0)
      throw std::invalid_argument("attention: reduction must be >= 1");
    if (kind == AttentionKind::Lca && groups == 0)
      throw std::invalid_argument("attention: groups must be >= 1");
    if (gamma == 0.0) throw std::invalid_argument("attention: gamma must be nonzero");
  }
};

// Odd kernel size derived from the channel count:
//   k = |log2(C)/gamma + b/gamma| truncated toward zero, bumped to the next
//   odd integer if even, floored at 1.
inline std::size_t adaptive_kernel_size(std::size_t channels, double gamma = 2.0,
                                        double b = 1.0) {
  if (channels == 0) throw std::invalid_argument("adaptive_kernel_size: channels must be >= 1");
  if (gamma == 0.0) throw std::invalid_argument("adaptive_kernel_size: gamma must be nonzero");
  double v = std::fabs(std::log2(static_cast<double>(channels)) / gamma + b / gamma);
  auto t = static_cast<long long>(v);  // trunc toward zero
  if (t % 2 == 0) t += 1;
  if (t < 1) t = 1;
  return static_cast<std::size_t>(t);
}

inline std::size_t se_bottleneck_width(std::size_t channels, std::size_t reduction) {
  if (reduction == 0) throw std::invalid_argument("se_bottleneck_width: reduction must be >= 1");
  std::size_t w = channels / reduction;
  return w < 1 ? 1 : w;
}

// Learnable weight count contributed by one attention site on a stage with
// `channels` channels. None contributes nothing; SE has two bias-free
// projections; the 1D variants cost one filter (or one per segment).
inline std::size_t attention_param_count(const AttentionSpec& spec, std::size_t channels) {
  spec.validate();
  switch (spec.kind) {
    case AttentionKind::None:
      return 0;
    case AttentionKind::Se: {
      std::size_t w = se_bottleneck_width(channels, spec.reduction);
      return 2 * w * channels;
    }
    case AttentionKind::Eca:
      return adaptive_kernel_size(channels, spec.gamma, spec.b);
    case AttentionKind::Lca: {
      std::size_t k = adaptive_kernel_size(channels, spec.gamma, spec.b);
      return spec.per_group_filters ? k * spec.groups : k;
    }
  }
  throw std::invalid_argument("unknown AttentionKind");
}

// Intermediates kept by the forward pass for use in the backward pass.
template <typename T>
struct AttentionCache {
  Tensor<T> z;       // pooled descriptor (N,C)
  Tensor<T> hidden;  // SE only: post-ReLU bottleneck (N,w)
  Tensor<T> s;       // gate in (0,1), (N,C)
};

// --- Squeeze-and-excite: GAP -> FC(C->w) -> ReLU -> FC(w->C) -> sigmoid -----

template <typename T>
Tensor<T> se_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2,
                     AttentionCache<T>* cache = nullptr) {
  check_rank(x, 4, "se input");
  const std::size_t c = x.dim(1);
  check_rank(w1, 2, "se w1");
  check_rank(w2, 2, "se w2");
  if (w1.dim(1) != c || w2.dim(0) != c || w1.dim(0) != w2.dim(1)) {
    throw std::invalid_argument("se: weight shapes " + w1.shape_str() + ", " + w2.shape_str() +
                                " inconsistent with " + std::to_string(c) + " channels");
  }
  Tensor<T> z = global_avg_pool(x);
  Tensor<T> h = relu_forward(linear_forward<T>(z, w1, nullptr));
  Tensor<T> s = sigmoid_forward(linear_forward<T>(h, w2, nullptr));
  Tensor<T> y = channel_scale(x, s);
  if (cache) {
    cache->z = std::move(z);
    cache->hidden = std::move(h);
    cache->s = std::move(s);
  }
  return y;
}

template <typename T>
struct SeGrads {
  Tensor<T> input;
  Tensor<T> w1;
  Tensor<T> w2;
};

template <typename T>
SeGrads<T> se_backward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2,
                       const AttentionCache<T>& cache, const Tensor<T>& upstream) {
  ChannelScaleGrads<T> sc = channel_scale_backward(x, cache.s, upstream);
  Tensor<T> gu = sigmoid_backward(cache.s, sc.scale);
  LinearGrads<T> l2 = linear_backward(cache.hidden, w2, gu);
  Tensor<T> gh = relu_backward(cache.hidden, l2.input);
  LinearGrads<T> l1 = linear_backward(cache.z, w1, gh);
  Tensor<T> gz = global_avg_pool_backward(l1.input, x.dim(2), x.dim(3));
  SeGrads<T> g;
  g.input = add_forward(sc.input, gz);
  g.w1 = std::move(l1.weights);
  g.w2 = std::move(l2.weights);
  return g;
}

// --- 1D-conv gates (shared by ECA and LCA) ---------------------------------
// GAP -> k-tap conv over the channel axis (within segments for LCA) ->
// sigmoid -> per-channel rescale.

template <typename T>
Tensor<T> conv1d_attention_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                                   std::size_t groups, AttentionCache<T>* cache = nullptr) {
  check_rank(x, 4, "conv1d attention input");
  Tensor<T> z = global_avg_pool(x);
  Tensor<T> s = sigmoid_forward(grouped_conv1d(z, kernel, groups));
  Tensor<T> y = channel_scale(x, s);
  if (cache) {
    cache->z = std::move(z);
    cache->s = std::move(s);
  }
  return y;
}

template <typename T>
struct Conv1dAttentionGrads {
  Tensor<T> input;
  Tensor<T> kernel;
};

template <typename T>
Conv1dAttentionGrads<T> conv1d_attention_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                                  std::size_t groups,
                                                  const AttentionCache<T>& cache,
                                                  const Tensor<T>& upstream) {
  ChannelScaleGrads<T> sc = channel_scale_backward(x, cache.s, upstream);
  Tensor<T> gu = sigmoid_backward(cache.s, sc.scale);
  Conv1dGrads<T> cg = grouped_conv1d_backward(cache.z, kernel, groups, gu);
  Tensor<T> gz = global_avg_pool_backward(cg.input, x.dim(2), x.dim(3));
  Conv1dAttentionGrads<T> g;
  g.input = add_forward(sc.input, gz);
  g.kernel = std::move(cg.kernel);
  return g;
}

template <typename T>
Tensor<T> eca_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                      AttentionCache<T>* cache = nullptr) {
  return conv1d_attention_forward(x, kernel, 1, cache);
}

template <typename T>
Conv1dAttentionGrads<T> eca_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                     const AttentionCache<T>& cache, const Tensor<T>& upstream) {
  return conv1d_attention_backward(x, kernel, 1, cache, upstream);
}

template <typename T>
Tensor<T> lca_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t groups,
                      AttentionCache<T>* cache = nullptr) {
  return conv1d_attention_forward(x, kernel, groups, cache);
}

template <typename T>
Conv1dAttentionGrads<T> lca_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                     std::size_t groups, const AttentionCache<T>& cache,
                                     const Tensor<T>& upstream) {
  return conv1d_attention_backward(x, kernel, groups, cache, upstream);
}

}  // namespace canet
