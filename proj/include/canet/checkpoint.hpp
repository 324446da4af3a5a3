#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/graph.hpp"
#include "canet/models.hpp"

namespace canet {

// Container layout: 8-byte magic, u32 format version, u32 header length, a
// JSON header echoing the build config and the tensor manifest, then the raw
// parameter blobs (little-endian IEEE-754 binary32) concatenated in manifest
// order. BatchNorm running statistics are stored alongside the learned
// parameters so a reload reproduces eval-mode outputs bit-for-bit.
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json attention_spec_to_json(const AttentionSpec& spec) {
  return nlohmann::json{{"kind", to_string(spec.kind)},
                        {"reduction", spec.reduction},
                        {"gamma", spec.gamma},
                        {"b", spec.b},
                        {"groups", spec.groups},
                        {"per_group_filters", spec.per_group_filters}};
}

inline AttentionSpec attention_spec_from_json(const nlohmann::json& j) {
  AttentionSpec spec;
  spec.kind = parse_attention_kind(j.at("kind").get<std::string>());
  spec.reduction = j.at("reduction").get<std::size_t>();
  spec.gamma = j.at("gamma").get<double>();
  spec.b = j.at("b").get<double>();
  spec.groups = j.at("groups").get<std::size_t>();
  spec.per_group_filters = j.at("per_group_filters").get<bool>();
  spec.validate();
  return spec;
}

struct CheckpointHeader {
  std::string arch;
  AttentionSpec attention;
  std::size_t num_classes = 10;
  std::uint64_t seed = 42;
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
  };
  std::vector<Entry> tensors;
};

namespace detail {

// Persisted tensors in graph order: each node's parameters, then BN running
// stats. Returns (name, pointer) pairs against the live graph.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> checkpoint_tensors(ModelGraph<T>& g) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& node : g.nodes) {
    for (auto& p : node.params) out.emplace_back(p.name, &p.value);
    if (node.kind == NodeKind::BatchNorm) {
      out.emplace_back(node.name + ".running_mean", &node.running_mean);
      out.emplace_back(node.name + ".running_var", &node.running_var);
    }
  }
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, ModelGraph<T>& g) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8, "unexpected scalar width");
  auto tensors = detail::checkpoint_tensors(g);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, tensor] : tensors) {
    manifest.push_back({{"name", name}, {"shape", tensor->shape()}});
  }
  nlohmann::json header{{"arch", g.arch},
                        {"attention", attention_spec_to_json(g.attention)},
                        {"num_classes", g.num_classes},
                        {"seed", g.init_seed},
                        {"dtype", "float32"},
                        {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  const auto header_len = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header_text.data(), static_cast<long>(header_text.size()));
  std::vector<float> blob;
  for (const auto& [name, tensor] : tensors) {
    blob.resize(tensor->size());
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      blob[i] = static_cast<float>(tensor->data()[i]);
    }
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<long>(blob.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: short write on " + path);
}

inline CheckpointHeader read_checkpoint_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint container");
  }
  std::uint32_t version = 0, header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 4) ||
      !in.read(reinterpret_cast<char*>(&header_len), 4)) {
    throw std::runtime_error("load_checkpoint: " + path + ": truncated container header");
  }
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: " + path + ": unsupported container version " +
                             std::to_string(version));
  }
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<long>(header_len))) {
    throw std::runtime_error("load_checkpoint: " + path + ": truncated header block");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + ": malformed header: " + e.what());
  }
  CheckpointHeader header;
  header.arch = j.at("arch").get<std::string>();
  header.attention = attention_spec_from_json(j.at("attention"));
  header.num_classes = j.at("num_classes").get<std::size_t>();
  header.seed = j.at("seed").get<std::uint64_t>();
  if (j.at("dtype").get<std::string>() != "float32") {
    throw std::runtime_error("load_checkpoint: " + path + ": unsupported dtype");
  }
  for (const auto& e : j.at("tensors")) {
    CheckpointHeader::Entry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<std::vector<std::size_t>>();
    header.tensors.push_back(std::move(entry));
  }
  return header;
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return read_checkpoint_header(in, path);
}

// Fills an already-built graph; the container must agree with the graph on
// config and on every tensor's name and shape, in order.
template <typename T>
void load_checkpoint_into(const std::string& path, ModelGraph<T>& g) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  auto header = read_checkpoint_header(in, path);
  if (header.arch != g.arch) {
    throw std::runtime_error("load_checkpoint: " + path + ": container arch '" + header.arch +
                             "' does not match graph arch '" + g.arch + "'");
  }
  if (header.num_classes != g.num_classes) {
    throw std::runtime_error("load_checkpoint: " + path + ": class count mismatch");
  }
  auto tensors = detail::checkpoint_tensors(g);
  if (header.tensors.size() != tensors.size()) {
    throw std::runtime_error("load_checkpoint: " + path + ": container lists " +
                             std::to_string(header.tensors.size()) + " tensors, graph has " +
                             std::to_string(tensors.size()));
  }
  std::vector<float> blob;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = header.tensors[i];
    auto* tensor = tensors[i].second;
    if (entry.name != tensors[i].first) {
      throw std::runtime_error("load_checkpoint: " + path + ": tensor " + std::to_string(i) +
                               " is '" + entry.name + "', graph expects '" + tensors[i].first +
                               "'");
    }
    if (entry.shape != tensor->shape()) {
      throw std::runtime_error("load_checkpoint: " + path + ": shape mismatch on '" +
                               entry.name + "': container " +
                               Tensor<T>::shape_string(entry.shape) + ", graph " +
                               tensor->shape_str());
    }
    blob.resize(tensor->size());
    if (!in.read(reinterpret_cast<char*>(blob.data()),
                 static_cast<long>(blob.size() * sizeof(float)))) {
      throw std::runtime_error("load_checkpoint: " + path + ": truncated blob for '" +
                               entry.name + "'");
    }
    for (std::size_t k = 0; k < tensor->size(); ++k) {
      tensor->data()[k] = static_cast<T>(blob[k]);
    }
  }
}

// Rebuilds the graph from the header's config echo, then fills it.
template <typename T = float>
ModelGraph<T> load_checkpoint(const std::string& path) {
  auto header = read_checkpoint_header(path);
  auto g = build_model<T>(header.arch, header.attention, header.num_classes);
  g.init_seed = header.seed;
  load_checkpoint_into(path, g);
  return g;
}

}  // namespace canet
