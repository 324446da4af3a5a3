#pragma once

#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/graph.hpp"

namespace canet {

// Cost model identifier. Bump when the counting rules change so emitted
// reports stay comparable.
inline constexpr const char* kFlopsConvention = "canet-flops-v1";

struct ProfileEntry {
  int node_id = 0;
  std::string name;
  std::string kind;
  std::size_t params = 0;
  std::size_t flops = 0;  // per sample
};

struct ProfileReport {
  std::string arch;
  std::string attention;
  std::size_t num_classes = 10;
  std::string convention = kFlopsConvention;
  std::vector<ProfileEntry> per_node;
  std::size_t total_params = 0;
  std::size_t total_flops = 0;
};

namespace detail {

template <typename T>
std::size_t node_param_count(const Node<T>& n) {
  std::size_t total = 0;
  for (const auto& p : n.params) total += p.value.size();
  return total;
}

// Per-sample cost of one node under the v1 convention:
//   conv/linear MACs count 1 FLOP each; BN costs 2 per element; activations,
//   adds, and channel scales cost 1 per element; pooling costs 1 per input
//   element. An attention node is the sum of its internal stages.
template <typename T>
std::size_t node_flops(const Node<T>& n, const std::vector<std::size_t>& in_shape,
                       const std::vector<std::size_t>& out_shape) {
  auto numel = [](const std::vector<std::size_t>& s) {
    std::size_t v = 1;
    for (std::size_t d : s) v *= d;
    return s.empty() ? 0 : v;
  };
  switch (n.kind) {
    case NodeKind::Input:
      return 0;
    case NodeKind::Conv2d:
      return out_shape[2] * out_shape[3] * n.conv.out_channels *
             (n.conv.in_channels / n.conv.groups) * n.conv.kernel_h * n.conv.kernel_w;
    case NodeKind::BatchNorm:
      return 2 * numel(out_shape);
    case NodeKind::ReLU:
    case NodeKind::ReLU6:
    case NodeKind::Add:
      return numel(out_shape);
    case NodeKind::GlobalAvgPool:
      return numel(in_shape);
    case NodeKind::Linear:
      return n.params.at(0).value.dim(0) * n.params.at(0).value.dim(1);
    case NodeKind::Attention: {
      const std::size_t c = in_shape[1];
      const std::size_t spatial = numel(in_shape);  // per sample: C*H*W
      std::size_t transform = 0, act = c;           // sigmoid over C
      switch (n.attn.kind) {
        case AttentionKind::Se: {
          const std::size_t w = se_bottleneck_width(c, n.attn.reduction);
          transform = 2 * w * c;
          act += w;  // bottleneck ReLU
          break;
        }
        case AttentionKind::Eca:
        case AttentionKind::Lca:
          transform = adaptive_kernel_size(c, n.attn.gamma, n.attn.b) * c;
          break;
        case AttentionKind::None:
          break;
      }
      return spatial /*GAP*/ + transform + act + spatial /*rescale*/;
    }
  }
  throw std::invalid_argument("unknown NodeKind");
}

}  // namespace detail

// Parameter and FLOPs accounting over the graph. FLOPs are per sample for a
// given input geometry; parameter counts are shape-independent.
template <typename T>
ProfileReport profile_graph(const ModelGraph<T>& g, std::size_t in_channels = 3,
                            std::size_t height = 32, std::size_t width = 32) {
  auto shapes = infer_shapes(g, 1, in_channels, height, width);
  ProfileReport r;
  r.arch = g.arch;
  r.attention = to_string(g.attention.kind);
  r.num_classes = g.num_classes;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    ProfileEntry e;
    e.node_id = static_cast<int>(i);
    e.name = n.name.empty() ? to_string(n.kind) : n.name;
    e.kind = to_string(n.kind);
    e.params = detail::node_param_count(n);
    e.flops = n.kind == NodeKind::Input
                  ? 0
                  : detail::node_flops(n, shapes[n.input0], shapes[i]);
    r.total_params += e.params;
    r.total_flops += e.flops;
    r.per_node.push_back(std::move(e));
  }
  return r;
}

template <typename T>
ProfileReport count_params(const ModelGraph<T>& g) {
  ProfileReport r = profile_graph(g);
  for (auto& e : r.per_node) e.flops = 0;
  r.total_flops = 0;
  return r;
}

template <typename T>
ProfileReport count_flops(const ModelGraph<T>& g, std::size_t in_channels = 3,
                          std::size_t height = 32, std::size_t width = 32) {
  ProfileReport r = profile_graph(g, in_channels, height, width);
  for (auto& e : r.per_node) e.params = 0;
  r.total_params = 0;
  return r;
}

struct ProfileDiff {
  long long param_delta = 0;
  double param_pct = 0.0;
  long long flops_delta = 0;
  double flops_pct = 0.0;
};

inline ProfileDiff diff_reports(const ProfileReport& a, const ProfileReport& b) {
  if (a.arch != b.arch) {
    throw std::invalid_argument("diff_reports: architecture mismatch '" + a.arch + "' vs '" +
                                b.arch + "'");
  }
  ProfileDiff d;
  d.param_delta = static_cast<long long>(b.total_params) - static_cast<long long>(a.total_params);
  d.flops_delta = static_cast<long long>(b.total_flops) - static_cast<long long>(a.total_flops);
  if (a.total_params > 0)
    d.param_pct = 100.0 * static_cast<double>(d.param_delta) /
                  static_cast<double>(a.total_params);
  if (a.total_flops > 0)
    d.flops_pct = 100.0 * static_cast<double>(d.flops_delta) / static_cast<double>(a.total_flops);
  return d;
}

// Display rounding used by the summary tables: integer counts to 0.01M.
inline double round_millions(std::size_t count) {
  return std::round(static_cast<double>(count) / 1e4) / 100.0;
}

inline nlohmann::json profile_to_json(const ProfileReport& r) {
  nlohmann::json per_node = nlohmann::json::array();
  for (const auto& e : r.per_node) {
    per_node.push_back({{"node_id", e.node_id},
                        {"name", e.name},
                        {"kind", e.kind},
                        {"params", e.params},
                        {"flops", e.flops}});
  }
  return nlohmann::json{{"config",
                         {{"arch", r.arch},
                          {"attention", r.attention},
                          {"num_classes", r.num_classes}}},
                        {"convention", r.convention},
                        {"per_node", per_node},
                        {"total_params", r.total_params},
                        {"total_flops", r.total_flops}};
}

inline ProfileReport profile_from_json(const nlohmann::json& j) {
  ProfileReport r;
  r.arch = j.at("config").at("arch").get<std::string>();
  r.attention = j.at("config").at("attention").get<std::string>();
  r.num_classes = j.at("config").at("num_classes").get<std::size_t>();
  r.convention = j.at("convention").get<std::string>();
  for (const auto& e : j.at("per_node")) {
    ProfileEntry entry;
    entry.node_id = e.at("node_id").get<int>();
    entry.name = e.at("name").get<std::string>();
    entry.kind = e.at("kind").get<std::string>();
    entry.params = e.at("params").get<std::size_t>();
    entry.flops = e.at("flops").get<std::size_t>();
    r.per_node.push_back(std::move(entry));
  }
  r.total_params = j.at("total_params").get<std::size_t>();
  r.total_flops = j.at("total_flops").get<std::size_t>();
  return r;
}

inline std::string profile_to_csv(const ProfileReport& r) {
  std::string out = "node_id,kind,params,flops\n";
  for (const auto& e : r.per_node) {
    out += std::to_string(e.node_id) + "," + e.kind + "," + std::to_string(e.params) + "," +
           std::to_string(e.flops) + "\n";
  }
  return out;
}

}  // namespace canet
