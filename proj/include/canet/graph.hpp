#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "canet/attention.hpp"
#include "canet/ops.hpp"
#include "canet/tensor.hpp"

namespace canet {

enum class NodeKind {
  Input,
  Conv2d,
  BatchNorm,
  ReLU,
  ReLU6,
  Add,
  Attention,
  GlobalAvgPool,
  Linear
};

inline std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Conv2d: return "conv2d";
    case NodeKind::BatchNorm: return "batchnorm";
    case NodeKind::ReLU: return "relu";
    case NodeKind::ReLU6: return "relu6";
    case NodeKind::Add: return "add";
    case NodeKind::Attention: return "attention";
    case NodeKind::GlobalAvgPool: return "gap";
    case NodeKind::Linear: return "linear";
  }
  throw std::invalid_argument("unknown NodeKind");
}

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool weight_decay = true;  // BN affine terms and biases opt out

  explicit Param(std::string n, Tensor<T> v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), weight_decay(wd) {}
};

template <typename T>
struct Node {
  NodeKind kind = NodeKind::Input;
  std::string name;
  int input0 = -1;
  int input1 = -1;  // second operand of Add

  ConvSpec conv;           // Conv2d nodes
  T bn_momentum = T(0.1);  // BatchNorm nodes
  T bn_eps = T(1e-5);
  Tensor<T> running_mean;
  Tensor<T> running_var;
  AttentionSpec attn;      // Attention nodes
  std::size_t channels = 0;  // Attention: gated channel count

  std::vector<Param<T>> params;
};

template <typename T>
struct ModelGraph {
  std::string arch;
  AttentionSpec attention;
  std::size_t num_classes = 10;
  std::uint64_t init_seed = 42;
  std::vector<Node<T>> nodes;  // topological order; nodes[0] is the Input

  int add(Node<T> n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes)
      for (const auto& p : n.params) total += p.value.size();
    return total;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& n : nodes)
      for (auto& p : n.params) fn(n, p);
  }

  void zero_grads() {
    for (auto& n : nodes)
      for (auto& p : n.params) std::fill(p.grad.values().begin(), p.grad.values().end(), T{0});
  }
};

template <typename T>
void validate_graph(const ModelGraph<T>& g) {
  if (g.nodes.empty() || g.nodes[0].kind != NodeKind::Input) {
    throw std::invalid_argument("graph: first node must be the input");
  }
  for (std::size_t i = 1; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    if (n.kind == NodeKind::Input) throw std::invalid_argument("graph: multiple input nodes");
    if (n.input0 < 0 || n.input0 >= static_cast<int>(i)) {
      throw std::invalid_argument("graph: node '" + n.name + "' has no valid producer");
    }
    if (n.kind == NodeKind::Add &&
        (n.input1 < 0 || n.input1 >= static_cast<int>(i))) {
      throw std::invalid_argument("graph: add node '" + n.name + "' needs two producers");
    }
  }
}

// Per-node output shapes for a given input geometry, without running data.
template <typename T>
std::vector<std::vector<std::size_t>> infer_shapes(const ModelGraph<T>& g, std::size_t n,
                                                   std::size_t c, std::size_t h, std::size_t w) {
  validate_graph(g);
  std::vector<std::vector<std::size_t>> shapes(g.nodes.size());
  shapes[0] = {n, c, h, w};
  for (std::size_t i = 1; i < g.nodes.size(); ++i) {
    const auto& node = g.nodes[i];
    const auto& in = shapes[node.input0];
    switch (node.kind) {
      case NodeKind::Conv2d: {
        if (in.size() != 4 || in[1] != node.conv.in_channels) {
          throw std::invalid_argument("graph: conv '" + node.name + "' fed " +
                                      Tensor<T>::shape_string(in) + ", expects " +
                                      std::to_string(node.conv.in_channels) + " channels");
        }
        shapes[i] = {in[0], node.conv.out_channels, node.conv.out_h(in[2]),
                     node.conv.out_w(in[3])};
        break;
      }
      case NodeKind::BatchNorm:
      case NodeKind::ReLU:
      case NodeKind::ReLU6:
      case NodeKind::Attention:
        shapes[i] = in;
        break;
      case NodeKind::Add: {
        if (shapes[node.input1] != in) {
          throw std::invalid_argument("graph: add '" + node.name + "' joins mismatched shapes");
        }
        shapes[i] = in;
        break;
      }
      case NodeKind::GlobalAvgPool:
        shapes[i] = {in[0], in[1]};
        break;
      case NodeKind::Linear:
        shapes[i] = {in[0], node.params.at(0).value.dim(0)};
        break;
      case NodeKind::Input:
        throw std::invalid_argument("graph: unexpected input node");
    }
  }
  return shapes;
}

template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;
  std::vector<BatchNormCache<T>> bn;
  std::vector<AttentionCache<T>> attn;
};

namespace detail {
template <typename T>
std::vector<int> consumer_counts(const ModelGraph<T>& g) {
  std::vector<int> uses(g.nodes.size(), 0);
  for (const auto& n : g.nodes) {
    if (n.input0 >= 0) ++uses[n.input0];
    if (n.input1 >= 0) ++uses[n.input1];
  }
  return uses;
}
}  // namespace detail

// Runs the graph on a batch. With a cache, every intermediate is retained for
// the backward pass; without one, activations are dropped as soon as their
// consumers have run. Training mode drives batch statistics into the BN
// running buffers, so it mutates the graph.
template <typename T>
Tensor<T> forward(ModelGraph<T>& g, const Tensor<T>& batch, bool training,
                  ForwardCache<T>* cache = nullptr) {
  validate_graph(g);
  check_rank(batch, 4, "model input");
  const std::size_t count = g.nodes.size();
  std::vector<Tensor<T>> local_acts;
  std::vector<Tensor<T>>* acts;
  if (cache) {
    cache->acts.assign(count, Tensor<T>());
    cache->bn.assign(count, BatchNormCache<T>());
    cache->attn.assign(count, AttentionCache<T>());
    acts = &cache->acts;
  } else {
    local_acts.assign(count, Tensor<T>());
    acts = &local_acts;
  }
  std::vector<int> pending = detail::consumer_counts(g);

  (*acts)[0] = batch;
  for (std::size_t i = 1; i < count; ++i) {
    auto& node = g.nodes[i];
    const Tensor<T>& x = (*acts)[node.input0];
    switch (node.kind) {
      case NodeKind::Conv2d: {
        const Tensor<T>* bias = node.conv.has_bias ? &node.params.at(1).value : nullptr;
        (*acts)[i] = conv2d_forward(x, node.params.at(0).value, bias, node.conv);
        break;
      }
      case NodeKind::BatchNorm:
        (*acts)[i] = batchnorm_forward(x, node.params.at(0).value, node.params.at(1).value,
                                       node.running_mean, node.running_var, training,
                                       node.bn_momentum, node.bn_eps,
                                       cache ? &cache->bn[i] : nullptr);
        break;
      case NodeKind::ReLU:
        (*acts)[i] = relu_forward(x);
        break;
      case NodeKind::ReLU6:
        (*acts)[i] = relu6_forward(x);
        break;
      case NodeKind::Add:
        (*acts)[i] = add_forward(x, (*acts)[node.input1]);
        break;
      case NodeKind::Attention: {
        AttentionCache<T>* ac = cache ? &cache->attn[i] : nullptr;
        switch (node.attn.kind) {
          case AttentionKind::Se:
            (*acts)[i] = se_forward(x, node.params.at(0).value, node.params.at(1).value, ac);
            break;
          case AttentionKind::Eca:
            (*acts)[i] = eca_forward(x, node.params.at(0).value, ac);
            break;
          case AttentionKind::Lca:
            (*acts)[i] = lca_forward(x, node.params.at(0).value, node.attn.groups, ac);
            break;
          case AttentionKind::None:
            throw std::invalid_argument("graph: attention node '" + node.name +
                                        "' has kind none");
        }
        break;
      }
      case NodeKind::GlobalAvgPool:
        (*acts)[i] = global_avg_pool(x);
        break;
      case NodeKind::Linear: {
        const Tensor<T>* bias = node.params.size() > 1 ? &node.params.at(1).value : nullptr;
        (*acts)[i] = linear_forward(x, node.params.at(0).value, bias);
        break;
      }
      case NodeKind::Input:
        throw std::invalid_argument("graph: unexpected input node");
    }
    if (!cache) {
      if (node.input0 >= 0 && --pending[node.input0] == 0 &&
          node.input0 != static_cast<int>(count) - 1) {
        local_acts[node.input0] = Tensor<T>();
      }
      if (node.input1 >= 0 && --pending[node.input1] == 0) {
        local_acts[node.input1] = Tensor<T>();
      }
    }
  }
  return (*acts)[count - 1];
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (!dst.same_shape(src)) {
    throw std::invalid_argument("gradient accumulation: shape mismatch " + dst.shape_str() +
                                " vs " + src.shape_str());
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Accumulates parameter gradients from an upstream gradient on the output
// node. Gradients add into Param::grad; call zero_grads() first for a fresh
// step. Requires the cache produced by forward(...,training=true).
template <typename T>
void backward(ModelGraph<T>& g, const ForwardCache<T>& cache, const Tensor<T>& upstream) {
  const std::size_t count = g.nodes.size();
  if (cache.acts.size() != count) {
    throw std::invalid_argument("backward: cache does not match graph");
  }
  std::vector<Tensor<T>> grads(count);

  auto accum = [&](int idx, Tensor<T>&& delta) {
    if (grads[idx].size() == 0) {
      grads[idx] = std::move(delta);
    } else {
      Tensor<T>& dst = grads[idx];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += delta[j];
    }
  };

  grads[count - 1] = upstream;
  for (std::size_t i = count - 1; i >= 1; --i) {
    if (grads[i].size() == 0) continue;  // node not on any path to the loss
    auto& node = g.nodes[i];
    const Tensor<T>& x = cache.acts[node.input0];
    Tensor<T>& gout = grads[i];
    switch (node.kind) {
      case NodeKind::Conv2d: {
        Conv2dGrads<T> cg = conv2d_backward(x, node.params.at(0).value, node.conv, gout);
        add_into(node.params.at(0).grad, cg.weights);
        if (node.conv.has_bias) add_into(node.params.at(1).grad, *cg.bias);
        accum(node.input0, std::move(cg.input));
        break;
      }
      case NodeKind::BatchNorm: {
        BatchNormGrads<T> bg = batchnorm_backward(x, node.params.at(0).value, cache.bn[i], gout);
        add_into(node.params.at(0).grad, bg.gamma);
        add_into(node.params.at(1).grad, bg.beta);
        accum(node.input0, std::move(bg.input));
        break;
      }
      case NodeKind::ReLU:
        accum(node.input0, relu_backward(cache.acts[i], gout));
        break;
      case NodeKind::ReLU6:
        accum(node.input0, relu6_backward(cache.acts[i], gout));
        break;
      case NodeKind::Add: {
        Tensor<T> copy = gout;
        accum(node.input1, std::move(copy));
        accum(node.input0, std::move(gout));
        break;
      }
      case NodeKind::Attention: {
        switch (node.attn.kind) {
          case AttentionKind::Se: {
            SeGrads<T> sg = se_backward(x, node.params.at(0).value, node.params.at(1).value,
                                        cache.attn[i], gout);
            add_into(node.params.at(0).grad, sg.w1);
            add_into(node.params.at(1).grad, sg.w2);
            accum(node.input0, std::move(sg.input));
            break;
          }
          case AttentionKind::Eca:
          case AttentionKind::Lca: {
            std::size_t groups = node.attn.kind == AttentionKind::Eca ? 1 : node.attn.groups;
            Conv1dAttentionGrads<T> ag = conv1d_attention_backward(
                x, node.params.at(0).value, groups, cache.attn[i], gout);
            add_into(node.params.at(0).grad, ag.kernel);
            accum(node.input0, std::move(ag.input));
            break;
          }
          case AttentionKind::None:
            throw std::invalid_argument("graph: attention node with kind none");
        }
        break;
      }
      case NodeKind::GlobalAvgPool:
        accum(node.input0, global_avg_pool_backward(gout, x.dim(2), x.dim(3)));
        break;
      case NodeKind::Linear: {
        LinearGrads<T> lg = linear_backward(x, node.params.at(0).value, gout);
        add_into(node.params.at(0).grad, lg.weights);
        if (node.params.size() > 1) add_into(node.params.at(1).grad, lg.bias);
        accum(node.input0, std::move(lg.input));
        break;
      }
      case NodeKind::Input:
        break;
    }
    grads[i] = Tensor<T>();  // done with this node's gradient
  }
}

// Deterministic initialization: a single engine seeded once, consumed in node
// order. Conv filters draw from N(0, 2/fan_in); the classifier and the SE
// projections use the uniform fan-in rule, as do the 1D gate filters.
template <typename T>
void init_weights(ModelGraph<T>& g, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  for (auto& node : g.nodes) {
    switch (node.kind) {
      case NodeKind::Conv2d: {
        const std::size_t fan_in =
            (node.conv.in_channels / node.conv.groups) * node.conv.kernel_h * node.conv.kernel_w;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (auto& v : node.params.at(0).value.values()) v = static_cast<T>(dist(rng));
        if (node.conv.has_bias) {
          for (auto& v : node.params.at(1).value.values()) v = T{0};
        }
        break;
      }
      case NodeKind::BatchNorm:
        for (auto& v : node.params.at(0).value.values()) v = T{1};
        for (auto& v : node.params.at(1).value.values()) v = T{0};
        for (auto& v : node.running_mean.values()) v = T{0};
        for (auto& v : node.running_var.values()) v = T{1};
        break;
      case NodeKind::Linear: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(node.params.at(0).value.dim(1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& p : node.params)
          for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
        break;
      }
      case NodeKind::Attention: {
        if (node.attn.kind == AttentionKind::Se) {
          for (auto& p : node.params) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.dim(1)));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
          }
        } else {
          Tensor<T>& ker = node.params.at(0).value;
          const std::size_t k = ker.rank() == 2 ? ker.dim(1) : ker.dim(0);
          const double bound = 1.0 / std::sqrt(static_cast<double>(k));
          std::uniform_real_distribution<double> dist(-bound, bound);
          for (auto& v : ker.values()) v = static_cast<T>(dist(rng));
        }
        break;
      }
      default:
        break;
    }
  }
  g.init_seed = seed;
}

}  // namespace canet
