#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "canet/attention.hpp"
#include "canet/graph.hpp"

namespace canet {

// Rounds a width to the nearest multiple of `divisor`, never dropping below
// 90% of the requested value. Inert at multiplier 1.0 for the stock widths.
inline std::size_t make_divisible(double v, std::size_t divisor = 8) {
  std::size_t min_value = divisor;
  auto rounded = static_cast<std::size_t>(v + static_cast<double>(divisor) / 2.0);
  std::size_t out = std::max(min_value, rounded / divisor * divisor);
  if (static_cast<double>(out) < 0.9 * v) out += divisor;
  return out;
}

namespace detail {

template <typename T>
int add_conv(ModelGraph<T>& g, int in, const std::string& name, ConvSpec spec) {
  spec.validate();
  Node<T> n;
  n.kind = NodeKind::Conv2d;
  n.name = name;
  n.input0 = in;
  n.conv = spec;
  n.params.emplace_back(name + ".weight",
                        Tensor<T>({spec.out_channels, spec.in_channels / spec.groups,
                                   spec.kernel_h, spec.kernel_w}));
  if (spec.has_bias) n.params.emplace_back(name + ".bias", Tensor<T>({spec.out_channels}), false);
  return g.add(std::move(n));
}

template <typename T>
int add_bn(ModelGraph<T>& g, int in, const std::string& name, std::size_t channels) {
  Node<T> n;
  n.kind = NodeKind::BatchNorm;
  n.name = name;
  n.input0 = in;
  n.running_mean = Tensor<T>({channels});
  n.running_var = Tensor<T>::ones({channels});
  n.params.emplace_back(name + ".gamma", Tensor<T>::ones({channels}), false);
  n.params.emplace_back(name + ".beta", Tensor<T>({channels}), false);
  return g.add(std::move(n));
}

template <typename T>
int add_unary(ModelGraph<T>& g, int in, const std::string& name, NodeKind kind) {
  Node<T> n;
  n.kind = kind;
  n.name = name;
  n.input0 = in;
  return g.add(std::move(n));
}

template <typename T>
int add_add(ModelGraph<T>& g, int a, int b, const std::string& name) {
  Node<T> n;
  n.kind = NodeKind::Add;
  n.name = name;
  n.input0 = a;
  n.input1 = b;
  return g.add(std::move(n));
}

template <typename T>
int add_linear(ModelGraph<T>& g, int in, const std::string& name, std::size_t fan_in,
               std::size_t fan_out) {
  Node<T> n;
  n.kind = NodeKind::Linear;
  n.name = name;
  n.input0 = in;
  n.params.emplace_back(name + ".weight", Tensor<T>({fan_out, fan_in}));
  n.params.emplace_back(name + ".bias", Tensor<T>({fan_out}), false);
  return g.add(std::move(n));
}

// Returns `in` unchanged when the requested kind is none, so call sites
// can wire the gate unconditionally.
template <typename T>
int add_attention(ModelGraph<T>& g, int in, const std::string& name, const AttentionSpec& spec,
                  std::size_t channels) {
  if (spec.kind == AttentionKind::None) return in;
  spec.validate();
  Node<T> n;
  n.kind = NodeKind::Attention;
  n.name = name;
  n.input0 = in;
  n.attn = spec;
  n.channels = channels;
  switch (spec.kind) {
    case AttentionKind::Se: {
      std::size_t w = se_bottleneck_width(channels, spec.reduction);
      n.params.emplace_back(name + ".fc1", Tensor<T>({w, channels}));
      n.params.emplace_back(name + ".fc2", Tensor<T>({channels, w}));
      break;
    }
    case AttentionKind::Eca: {
      std::size_t k = adaptive_kernel_size(channels, spec.gamma, spec.b);
      n.params.emplace_back(name + ".kernel", Tensor<T>({k}));
      break;
    }
    case AttentionKind::Lca: {
      std::size_t k = adaptive_kernel_size(channels, spec.gamma, spec.b);
      if (channels % spec.groups != 0) {
        throw std::invalid_argument("attention '" + name + "': " + std::to_string(channels) +
                                    " channels not divisible into " +
                                    std::to_string(spec.groups) + " segments");
      }
      if (spec.per_group_filters) {
        n.params.emplace_back(name + ".kernel", Tensor<T>({spec.groups, k}));
      } else {
        n.params.emplace_back(name + ".kernel", Tensor<T>({k}));
      }
      break;
    }
    case AttentionKind::None:
      break;
  }
  return g.add(std::move(n));
}

}  // namespace detail

// 32x32 variant: 3x3 stride-1 stem, no initial pooling, four stages of two
// residual blocks at 64/128/256/512 channels. The gate sits on the residual
// branch after the second BN, before the join.
template <typename T>
ModelGraph<T> build_resnet18_cifar(const AttentionSpec& attention, std::size_t num_classes = 10) {
  attention.validate();
  ModelGraph<T> g;
  g.arch = "resnet18";
  g.attention = attention;
  g.num_classes = num_classes;

  Node<T> input;
  input.kind = NodeKind::Input;
  input.name = "input";
  g.add(std::move(input));

  int cur = detail::add_conv(g, 0, "stem.conv",
                             ConvSpec{3, 64, 3, 3, 1, 1, 1, false});
  cur = detail::add_bn(g, cur, "stem.bn", 64);
  cur = detail::add_unary(g, cur, "stem.relu", NodeKind::ReLU);

  const std::size_t widths[4] = {64, 128, 256, 512};
  std::size_t in_ch = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::size_t out_ch = widths[stage];
    for (int block = 0; block < 2; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::string base = "layer" + std::to_string(stage + 1) + "." + std::to_string(block);
      const int shortcut_src = cur;

      int b = detail::add_conv(g, cur, base + ".conv1",
                               ConvSpec{in_ch, out_ch, 3, 3, stride, 1, 1, false});
      b = detail::add_bn(g, b, base + ".bn1", out_ch);
      b = detail::add_unary(g, b, base + ".relu1", NodeKind::ReLU);
      b = detail::add_conv(g, b, base + ".conv2", ConvSpec{out_ch, out_ch, 3, 3, 1, 1, 1, false});
      b = detail::add_bn(g, b, base + ".bn2", out_ch);
      b = detail::add_attention(g, b, base + ".att", attention, out_ch);

      int sc = shortcut_src;
      if (stride != 1 || in_ch != out_ch) {
        sc = detail::add_conv(g, shortcut_src, base + ".down.conv",
                              ConvSpec{in_ch, out_ch, 1, 1, stride, 0, 1, false});
        sc = detail::add_bn(g, sc, base + ".down.bn", out_ch);
      }
      b = detail::add_add(g, b, sc, base + ".add");
      cur = detail::add_unary(g, b, base + ".relu2", NodeKind::ReLU);
      in_ch = out_ch;
    }
  }

  cur = detail::add_unary(g, cur, "head.gap", NodeKind::GlobalAvgPool);
  detail::add_linear(g, cur, "head.fc", 512, num_classes);
  return g;
}

struct InvertedResidualSetting {
  std::size_t expand;
  std::size_t channels;
  std::size_t repeats;
  std::size_t stride;
};

// The 32x32 stage table: both the stem and the first striding stage run at
// stride 1 so the final feature map is 4x4 instead of 1x1.
inline std::vector<InvertedResidualSetting> mobilenetv2_cifar_settings() {
  return {{1, 16, 1, 1}, {6, 24, 2, 1}, {6, 32, 3, 2}, {6, 64, 4, 2},
          {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
}

// 32x32 variant with the gate applied to each block's output, after the
// residual join when there is one.
template <typename T>
ModelGraph<T> build_mobilenetv2_cifar(const AttentionSpec& attention,
                                      std::size_t num_classes = 10,
                                      double width_mult = 1.0) {
  attention.validate();
  ModelGraph<T> g;
  g.arch = "mobilenetv2";
  g.attention = attention;
  g.num_classes = num_classes;

  Node<T> input;
  input.kind = NodeKind::Input;
  input.name = "input";
  g.add(std::move(input));

  std::size_t in_ch = make_divisible(32.0 * width_mult);
  int cur = detail::add_conv(g, 0, "stem.conv",
                             ConvSpec{3, in_ch, 3, 3, 1, 1, 1, false});
  cur = detail::add_bn(g, cur, "stem.bn", in_ch);
  cur = detail::add_unary(g, cur, "stem.relu6", NodeKind::ReLU6);

  int block_idx = 0;
  for (const auto& s : mobilenetv2_cifar_settings()) {
    const std::size_t out_ch = make_divisible(static_cast<double>(s.channels) * width_mult);
    for (std::size_t r = 0; r < s.repeats; ++r) {
      const std::size_t stride = r == 0 ? s.stride : 1;
      const std::string base = "block" + std::to_string(block_idx++);
      const std::size_t hidden = in_ch * s.expand;
      const int block_in = cur;

      int b = cur;
      if (s.expand != 1) {
        b = detail::add_conv(g, b, base + ".expand.conv",
                             ConvSpec{in_ch, hidden, 1, 1, 1, 0, 1, false});
        b = detail::add_bn(g, b, base + ".expand.bn", hidden);
        b = detail::add_unary(g, b, base + ".expand.relu6", NodeKind::ReLU6);
      }
      b = detail::add_conv(g, b, base + ".dw.conv",
                           ConvSpec{hidden, hidden, 3, 3, stride, 1, hidden, false});
      b = detail::add_bn(g, b, base + ".dw.bn", hidden);
      b = detail::add_unary(g, b, base + ".dw.relu6", NodeKind::ReLU6);
      b = detail::add_conv(g, b, base + ".project.conv",
                           ConvSpec{hidden, out_ch, 1, 1, 1, 0, 1, false});
      b = detail::add_bn(g, b, base + ".project.bn", out_ch);

      if (stride == 1 && in_ch == out_ch) {
        b = detail::add_add(g, b, block_in, base + ".add");
      }
      cur = detail::add_attention(g, b, base + ".att", attention, out_ch);
      in_ch = out_ch;
    }
  }

  const std::size_t last = make_divisible(1280.0 * std::max(1.0, width_mult));
  cur = detail::add_conv(g, cur, "head.conv", ConvSpec{in_ch, last, 1, 1, 1, 0, 1, false});
  cur = detail::add_bn(g, cur, "head.bn", last);
  cur = detail::add_unary(g, cur, "head.relu6", NodeKind::ReLU6);
  cur = detail::add_unary(g, cur, "head.gap", NodeKind::GlobalAvgPool);
  detail::add_linear(g, cur, "head.fc", last, num_classes);
  return g;
}

// Exercise rig: touches every node kind yet stays small enough for
// finite-difference sweeps in double precision.
template <typename T>
ModelGraph<T> build_tiny_cifar(const AttentionSpec& attention, std::size_t num_classes = 10) {
  attention.validate();
  ModelGraph<T> g;
  g.arch = "tiny";
  g.attention = attention;
  g.num_classes = num_classes;

  Node<T> input;
  input.kind = NodeKind::Input;
  input.name = "input";
  g.add(std::move(input));

  int cur = detail::add_conv(g, 0, "stem.conv", ConvSpec{3, 8, 3, 3, 1, 1, 1, false});
  cur = detail::add_bn(g, cur, "stem.bn", 8);
  cur = detail::add_unary(g, cur, "stem.relu", NodeKind::ReLU);

  const int shortcut = cur;
  int b = detail::add_conv(g, cur, "block.conv", ConvSpec{8, 8, 3, 3, 1, 1, 1, false});
  b = detail::add_bn(g, b, "block.bn", 8);
  b = detail::add_attention(g, b, "block.att", attention, 8);
  b = detail::add_add(g, b, shortcut, "block.add");
  cur = detail::add_unary(g, b, "block.relu", NodeKind::ReLU);

  cur = detail::add_conv(g, cur, "dw.conv", ConvSpec{8, 8, 3, 3, 2, 1, 8, false});
  cur = detail::add_bn(g, cur, "dw.bn", 8);
  cur = detail::add_unary(g, cur, "dw.relu6", NodeKind::ReLU6);

  cur = detail::add_unary(g, cur, "head.gap", NodeKind::GlobalAvgPool);
  detail::add_linear(g, cur, "head.fc", 8, num_classes);
  return g;
}

template <typename T>
ModelGraph<T> build_model(const std::string& arch, const AttentionSpec& attention,
                          std::size_t num_classes = 10) {
  if (arch == "resnet18") return build_resnet18_cifar<T>(attention, num_classes);
  if (arch == "mobilenetv2") return build_mobilenetv2_cifar<T>(attention, num_classes);
  if (arch == "tiny") return build_tiny_cifar<T>(attention, num_classes);
  throw std::invalid_argument("unknown architecture '" + arch +
                              "' (expected resnet18|mobilenetv2|tiny)");
}

}  // namespace canet
