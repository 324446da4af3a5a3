#include "canet/attention.hpp"

#include <gtest/gtest.h>

#include <random>

using canet::adaptive_kernel_size;
using canet::AttentionCache;
using canet::AttentionKind;
using canet::AttentionSpec;
using canet::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

const std::size_t kResnetSites[] = {64, 64, 128, 128, 256, 256, 512, 512};
const std::size_t kMobilenetSites[] = {16,  24,  24,  32,  32,  32,  64, 64, 64,
                                       64,  96,  96,  96,  160, 160, 160, 320};

}  // namespace

TEST(AdaptiveKernel, KnownChannelCounts) {
  EXPECT_EQ(adaptive_kernel_size(64), 3u);
  EXPECT_EQ(adaptive_kernel_size(128), 5u);
  EXPECT_EQ(adaptive_kernel_size(256), 5u);
  EXPECT_EQ(adaptive_kernel_size(512), 5u);
  for (std::size_t c : {16u, 24u, 32u, 64u, 96u}) EXPECT_EQ(adaptive_kernel_size(c), 3u) << c;
  for (std::size_t c : {160u, 320u}) EXPECT_EQ(adaptive_kernel_size(c), 5u) << c;
}

TEST(AdaptiveKernel, AlwaysOddAndMonotone) {
  std::size_t prev = 1;
  for (std::size_t c = 1; c <= 4096; ++c) {
    std::size_t k = adaptive_kernel_size(c);
    EXPECT_GE(k, 1u);
    EXPECT_EQ(k % 2, 1u);
    EXPECT_GE(k, prev) << "not monotone at C=" << c;
    prev = k;
  }
}

TEST(AdaptiveKernel, RejectsZeroChannels) {
  EXPECT_THROW(adaptive_kernel_size(0), std::invalid_argument);
}

TEST(BottleneckWidth, FloorsAtOne) {
  EXPECT_EQ(canet::se_bottleneck_width(16, 16), 1u);
  EXPECT_EQ(canet::se_bottleneck_width(24, 16), 1u);
  EXPECT_EQ(canet::se_bottleneck_width(32, 16), 2u);
  EXPECT_EQ(canet::se_bottleneck_width(512, 16), 32u);
  EXPECT_EQ(canet::se_bottleneck_width(8, 16), 1u);
}

TEST(ParamCount, SingleSite) {
  AttentionSpec se;
  se.kind = AttentionKind::Se;
  EXPECT_EQ(canet::attention_param_count(se, 64), 512u);  // 2*(64/16)*64

  AttentionSpec eca;
  eca.kind = AttentionKind::Eca;
  EXPECT_EQ(canet::attention_param_count(eca, 64), 3u);
  EXPECT_EQ(canet::attention_param_count(eca, 512), 5u);

  AttentionSpec lca;
  lca.kind = AttentionKind::Lca;
  EXPECT_EQ(canet::attention_param_count(lca, 512), 5u);  // shared filter

  lca.per_group_filters = true;
  EXPECT_EQ(canet::attention_param_count(lca, 512), 20u);  // one filter per segment

  AttentionSpec none;
  EXPECT_EQ(canet::attention_param_count(none, 512), 0u);
}

TEST(ParamCount, SiteSums) {
  AttentionSpec se, eca, lca;
  se.kind = AttentionKind::Se;
  eca.kind = AttentionKind::Eca;
  lca.kind = AttentionKind::Lca;

  std::size_t se_r18 = 0, eca_r18 = 0, lca_r18 = 0;
  for (std::size_t c : kResnetSites) {
    se_r18 += canet::attention_param_count(se, c);
    eca_r18 += canet::attention_param_count(eca, c);
    lca_r18 += canet::attention_param_count(lca, c);
  }
  EXPECT_EQ(se_r18, 87040u);
  EXPECT_EQ(eca_r18, 36u);
  EXPECT_EQ(lca_r18, 36u);

  std::size_t se_mnv2 = 0, eca_mnv2 = 0, lca_mnv2 = 0;
  for (std::size_t c : kMobilenetSites) {
    se_mnv2 += canet::attention_param_count(se, c);
    eca_mnv2 += canet::attention_param_count(eca, c);
    lca_mnv2 += canet::attention_param_count(lca, c);
  }
  // Integer bottleneck widths give 2*max(1,floor(C/16))*C per site; the
  // ideal-formula sum 2*C^2/16 would need a fractional width at C=24.
  EXPECT_EQ(se_mnv2, 28416u);
  EXPECT_EQ(eca_mnv2, 59u);
  EXPECT_EQ(lca_mnv2, 59u);
}

TEST(Attention, ShapePreservedAndGateInUnitInterval) {
  std::mt19937 rng(211);
  auto x = random_tensor({3, 16, 5, 5}, rng, -2.0, 2.0);

  auto w1 = random_tensor({1, 16}, rng);
  auto w2 = random_tensor({16, 1}, rng);
  AttentionCache<double> cache;
  auto y = canet::se_forward<double>(x, w1, w2, &cache);
  EXPECT_TRUE(y.same_shape(x));
  for (auto s : cache.s.values()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }

  auto k = random_tensor({3}, rng);
  AttentionCache<double> ecache;
  auto ye = canet::eca_forward<double>(x, k, &ecache);
  EXPECT_TRUE(ye.same_shape(x));
  for (auto s : ecache.s.values()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }

  AttentionCache<double> lcache;
  auto yl = canet::lca_forward<double>(x, k, 4, &lcache);
  EXPECT_TRUE(yl.same_shape(x));
  for (auto s : lcache.s.values()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Attention, ZeroWeightsScaleByHalf) {
  std::mt19937 rng(223);
  auto x = random_tensor({2, 8, 3, 3}, rng);

  Tensor<double> w1({1, 8}), w2({8, 1});
  auto yse = canet::se_forward<double>(x, w1, w2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(yse[i], 0.5 * x[i]);

  Tensor<double> k({3});
  auto yeca = canet::eca_forward<double>(x, k);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(yeca[i], 0.5 * x[i]);

  auto ylca = canet::lca_forward<double>(x, k, 4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(ylca[i], 0.5 * x[i]);
}

TEST(Attention, LcaWithOneGroupIsEca) {
  std::mt19937 rng(227);
  auto x = random_tensor({2, 32, 4, 4}, rng);
  auto k = random_tensor({5}, rng);
  auto eca = canet::eca_forward<double>(x, k);
  auto lca = canet::lca_forward<double>(x, k, 1);
  ASSERT_TRUE(eca.same_shape(lca));
  for (std::size_t i = 0; i < eca.size(); ++i) ASSERT_EQ(eca[i], lca[i]);  // bit-identical
}

TEST(Attention, LcaLocality) {
  std::mt19937 rng(229);
  auto x = random_tensor({1, 8, 3, 3}, rng);
  auto k = random_tensor({3}, rng);

  AttentionCache<double> before;
  canet::lca_forward<double>(x, k, 4, &before);

  // Perturb channel 0; only the first segment's gates may move.
  for (std::size_t i = 0; i < 9; ++i) x.at(0, 0, i / 3, i % 3) += 0.37;
  AttentionCache<double> after;
  canet::lca_forward<double>(x, k, 4, &after);

  for (std::size_t c = 2; c < 8; ++c)
    EXPECT_EQ(before.s.at(0, c), after.s.at(0, c)) << "segment leak into channel " << c;
  bool moved = false;
  for (std::size_t c = 0; c < 2; ++c) moved |= before.s.at(0, c) != after.s.at(0, c);
  EXPECT_TRUE(moved);
}

TEST(Attention, EcaDeltaKernelGatesOnChannelMean) {
  Tensor<double> x({1, 4, 2, 2});
  const double vals[] = {-1.5, 0.0, 0.5, 2.0};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) x.at(0, c, i / 2, i % 2) = vals[c];
  Tensor<double> delta({3}, {0.0, 1.0, 0.0});
  AttentionCache<double> cache;
  canet::eca_forward<double>(x, delta, &cache);
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(cache.s.at(0, c), 1.0 / (1.0 + std::exp(-vals[c])), 1e-12);
}

TEST(Attention, ZeroInputStaysZeroUnderSe) {
  std::mt19937 rng(233);
  Tensor<double> x({2, 8, 3, 3});
  auto w1 = random_tensor({1, 8}, rng);
  auto w2 = random_tensor({8, 1}, rng);
  auto y = canet::se_forward<double>(x, w1, w2);
  for (auto v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, SeMatchesStepByStepComposition) {
  std::mt19937 rng(239);
  auto x = random_tensor({2, 16, 4, 4}, rng);
  auto w1 = random_tensor({1, 16}, rng);
  auto w2 = random_tensor({16, 1}, rng);

  auto z = canet::global_avg_pool(x);
  auto h = canet::relu_forward(canet::linear_forward<double>(z, w1, nullptr));
  auto s = canet::sigmoid_forward(canet::linear_forward<double>(h, w2, nullptr));
  auto want = canet::channel_scale(x, s);

  auto got = canet::se_forward<double>(x, w1, w2);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Attention, EcaMatchesStepByStepComposition) {
  std::mt19937 rng(241);
  auto x = random_tensor({1, 32, 4, 4}, rng);
  auto k = random_tensor({5}, rng);

  auto z = canet::global_avg_pool(x);
  auto s = canet::sigmoid_forward(canet::grouped_conv1d<double>(z, k, 1));
  auto want = canet::channel_scale(x, s);

  auto got = canet::eca_forward<double>(x, k);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Attention, ShapeMismatchRejected) {
  Tensor<double> x({1, 8, 2, 2});
  Tensor<double> w1({2, 4});  // expects 8 input channels
  Tensor<double> w2({8, 2});
  EXPECT_THROW(canet::se_forward<double>(x, w1, w2), std::invalid_argument);

  Tensor<double> k({3});
  Tensor<double> x6({1, 6, 2, 2});
  EXPECT_THROW(canet::lca_forward<double>(x6, k, 4), std::invalid_argument);
}

TEST(AttentionSpec, KindParsing) {
  EXPECT_EQ(canet::parse_attention_kind("none"), AttentionKind::None);
  EXPECT_EQ(canet::parse_attention_kind("se"), AttentionKind::Se);
  EXPECT_EQ(canet::parse_attention_kind("eca"), AttentionKind::Eca);
  EXPECT_EQ(canet::parse_attention_kind("lca"), AttentionKind::Lca);
  EXPECT_THROW(canet::parse_attention_kind("cbam"), std::invalid_argument);
  EXPECT_EQ(canet::to_string(AttentionKind::Lca), "lca");
}
