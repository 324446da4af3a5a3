#include "canet/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "canet/models.hpp"

using canet::AttentionKind;
using canet::AttentionSpec;
using canet::Tensor;

namespace {

std::string fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::path(::testing::TempDir()) / ("canet_ckpt_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

canet::ModelGraph<float> trained_tiny(const AttentionSpec& spec, std::uint64_t seed) {
  auto g = canet::build_tiny_cifar<float>(spec);
  canet::init_weights(g, seed);
  // One training-mode forward so BN running stats leave their initial state.
  Tensor<float> batch({4, 3, 32, 32});
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (std::size_t i = 0; i < batch.size(); ++i) batch.data()[i] = dist(rng);
  canet::ForwardCache<float> cache;
  canet::forward(g, batch, /*training=*/true, &cache);
  return g;
}

AttentionSpec lca_spec(bool per_group) {
  AttentionSpec spec;
  spec.kind = AttentionKind::Lca;
  spec.per_group_filters = per_group;
  return spec;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  auto dir = fresh_dir("roundtrip");
  const std::string path = dir + "/tiny.ckpt";
  auto g = trained_tiny(lca_spec(false), 42);
  canet::save_checkpoint(path, g);
  auto back = canet::load_checkpoint<float>(path);

  EXPECT_EQ(back.arch, "tiny");
  EXPECT_EQ(back.attention.kind, AttentionKind::Lca);
  EXPECT_EQ(back.num_classes, g.num_classes);
  EXPECT_EQ(back.init_seed, g.init_seed);

  auto a = canet::detail::checkpoint_tensors(g);
  auto b = canet::detail::checkpoint_tensors(back);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second->shape(), b[i].second->shape()) << a[i].first;
    for (std::size_t k = 0; k < a[i].second->size(); ++k) {
      ASSERT_EQ(a[i].second->data()[k], b[i].second->data()[k]) << a[i].first;
    }
  }

  // Running stats moved away from their init values and still round-tripped.
  bool bn_seen = false;
  for (const auto& node : g.nodes) {
    if (node.kind == canet::NodeKind::BatchNorm) {
      bn_seen = true;
      bool moved = false;
      for (std::size_t k = 0; k < node.running_mean.size(); ++k) {
        if (node.running_mean.data()[k] != 0.0f) moved = true;
      }
      EXPECT_TRUE(moved) << node.name;
    }
  }
  EXPECT_TRUE(bn_seen);
}

TEST(Checkpoint, HeaderEchoesConfig) {
  auto dir = fresh_dir("header");
  const std::string path = dir + "/model.ckpt";
  AttentionSpec spec;
  spec.kind = AttentionKind::Se;
  spec.reduction = 8;
  auto g = canet::build_tiny_cifar<float>(spec, /*num_classes=*/7);
  canet::init_weights(g, 99);
  canet::save_checkpoint(path, g);
  auto header = canet::read_checkpoint_header(path);
  EXPECT_EQ(header.arch, "tiny");
  EXPECT_EQ(header.attention.kind, AttentionKind::Se);
  EXPECT_EQ(header.attention.reduction, 8u);
  EXPECT_EQ(header.num_classes, 7u);
  EXPECT_EQ(header.seed, 99u);
  EXPECT_FALSE(header.tensors.empty());
  EXPECT_EQ(header.tensors[0].name, "stem.conv.weight");
}

TEST(Checkpoint, RejectsArchMismatch) {
  auto dir = fresh_dir("arch");
  const std::string path = dir + "/tiny.ckpt";
  auto g = trained_tiny(AttentionSpec{}, 1);
  canet::save_checkpoint(path, g);
  auto other = canet::build_resnet18_cifar<float>(AttentionSpec{});
  try {
    canet::load_checkpoint_into(path, other);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("tiny"), std::string::npos) << msg;
    EXPECT_NE(msg.find("resnet18"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, RejectsShapeMismatchByName) {
  auto dir = fresh_dir("shape");
  const std::string path = dir + "/shared.ckpt";
  auto g = trained_tiny(lca_spec(false), 2);
  canet::save_checkpoint(path, g);
  // Same arch and names, but the per-group variant stores (groups, k) kernels.
  auto variant = canet::build_tiny_cifar<float>(lca_spec(true));
  canet::init_weights(variant, 2);
  try {
    canet::load_checkpoint_into(path, variant);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("shape mismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("att.kernel"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, RejectsForeignAndCorruptFiles) {
  auto dir = fresh_dir("corrupt");
  const std::string not_ckpt = dir + "/plain.json";
  {
    std::ofstream out(not_ckpt);
    out << "{\"hello\": 1}";
  }
  EXPECT_THROW(canet::read_checkpoint_header(not_ckpt), std::runtime_error);
  try {
    canet::read_checkpoint_header(not_ckpt);
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("not a checkpoint container"), std::string::npos);
  }

  EXPECT_THROW(canet::read_checkpoint_header(dir + "/absent.ckpt"), std::runtime_error);

  const std::string path = dir + "/tiny.ckpt";
  auto g = trained_tiny(AttentionSpec{}, 3);
  canet::save_checkpoint(path, g);

  // Truncate the blob region: header parses, payload does not.
  const auto full_size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full_size - 64);
  auto fresh = canet::build_tiny_cifar<float>(AttentionSpec{});
  try {
    canet::load_checkpoint_into(path, fresh);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated blob"), std::string::npos) << e.what();
  }

  // Bump the version field (bytes 8..11).
  canet::save_checkpoint(path, g);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t bad = 77;
    f.write(reinterpret_cast<const char*>(&bad), 4);
  }
  try {
    canet::read_checkpoint_header(path);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, AttentionSpecJsonRoundTrip) {
  AttentionSpec spec;
  spec.kind = AttentionKind::Lca;
  spec.reduction = 4;
  spec.gamma = 3.0;
  spec.b = 2.0;
  spec.groups = 8;
  spec.per_group_filters = true;
  auto j = canet::attention_spec_to_json(spec);
  auto back = canet::attention_spec_from_json(j);
  EXPECT_EQ(back.kind, spec.kind);
  EXPECT_EQ(back.reduction, spec.reduction);
  EXPECT_DOUBLE_EQ(back.gamma, spec.gamma);
  EXPECT_DOUBLE_EQ(back.b, spec.b);
  EXPECT_EQ(back.groups, spec.groups);
  EXPECT_EQ(back.per_group_filters, spec.per_group_filters);
}
