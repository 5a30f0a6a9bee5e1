#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cloudmamba/loss.hpp"
#include "cloudmamba/model/refine.hpp"
#include "test_util.hpp"

using namespace cloudmamba;
using namespace cloudmamba::model;

namespace {

ModelConfig small_config(int levels) {
  ModelConfig c;
  c.levels = levels;
  c.base_channels = 4;
  c.max_channels = 32;
  c.state_dim = 4;
  return c;
}

Tensor image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testutil::random_tensor({h, w, 4}, rng, 0, 1);
}

ProbabilityMap grid(int h, int w, std::initializer_list<Real> v) {
  ProbabilityMap g(h, w);
  g.data.assign(v);
  return g;
}

BinaryMask mask(int h, int w, std::initializer_list<std::uint8_t> v) {
  BinaryMask m(h, w);
  m.data.assign(v);
  return m;
}

// Dyadic probabilities k/1024 keep every quantity below exactly representable.
ProbabilityMap dyadic_map(int h, int w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> k(0, 1024);
  ProbabilityMap p(h, w);
  for (auto& v : p.data) v = k(rng) / 1024.0;
  return p;
}

}  // namespace

TEST(Uncertainty, FixedPoints) {
  const auto u = uncertainty_map(grid(1, 4, {0.5, 0.0, 1.0, 0.8}));
  EXPECT_EQ(u[0], 1.0);
  EXPECT_EQ(u[1], 0.0);
  EXPECT_EQ(u[2], 0.0);
  EXPECT_NEAR(u[3], 0.4, 1e-15);
}

TEST(Uncertainty, OutOfRangeIsDomainError) {
  EXPECT_THROW(uncertainty_map(grid(1, 1, {1.1})), DomainError);
  EXPECT_THROW(uncertainty_map(grid(1, 1, {-0.01})), DomainError);
  EXPECT_THROW(uncertainty_map(grid(1, 1, {std::numeric_limits<Real>::quiet_NaN()})), DomainError);
}

TEST(Uncertainty, RangeAndEndpointsOverRandomMaps) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto p = dyadic_map(8, 8, rng);
    const auto u = uncertainty_map(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ASSERT_TRUE(u[i] >= 0 && u[i] <= 1);
      ASSERT_EQ(u[i] == 1, p[i] == 0.5);
      ASSERT_EQ(u[i] == 0, p[i] == 0 || p[i] == 1);
    }
  }
}

TEST(AcceptanceMask, StrictThreshold) {
  EXPECT_EQ(acceptance_mask(grid(1, 1, {0.39}), 0.4)[0], 1);
  EXPECT_EQ(acceptance_mask(grid(1, 1, {0.4}), 0.4)[0], 0);
  const auto all = acceptance_mask(ProbabilityMap(3, 3, 0.0), 0.4);
  for (auto v : all.data) EXPECT_EQ(v, 1);
}

// U < γ  ⇔  |P − 0.5| > (1 − γ)/2.
TEST(AcceptanceMask, EquivalentToDistanceFromHalf) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> j(1, 64);
  for (int t = 0; t < 1000; ++t) {
    const Real gamma = j(rng) / 64.0;
    const auto p = dyadic_map(4, 4, rng);
    const auto m = acceptance_mask(uncertainty_map(p), gamma);
    for (std::size_t i = 0; i < p.size(); ++i)
      ASSERT_EQ(m[i] == 1, std::abs(p[i] - 0.5) > (1 - gamma) / 2) << "P=" << p[i] << " gamma=" << gamma;
  }
}

// A band of half-width γ/2 around 0.5 does not describe the rejected set:
// P = 0.75 lies outside [0.3, 0.7] yet U = 0.5 is not below γ = 0.4.
TEST(AcceptanceMask, HalfGammaBandIsNotTheRejectedSet) {
  const auto u = uncertainty_map(grid(1, 1, {0.75}));
  EXPECT_EQ(u[0], 0.5);
  EXPECT_EQ(acceptance_mask(u, 0.4)[0], 0);
}

TEST(AcceptanceMask, LargerGammaOnlyGrowsAcceptedSet) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> j(1, 64);
  for (int t = 0; t < 1000; ++t) {
    Real g1 = j(rng) / 64.0, g2 = j(rng) / 64.0;
    if (g1 > g2) std::swap(g1, g2);
    const auto u = uncertainty_map(dyadic_map(4, 4, rng));
    const auto m1 = acceptance_mask(u, g1), m2 = acceptance_mask(u, g2);
    for (std::size_t i = 0; i < u.size(); ++i) ASSERT_LE(m1[i], m2[i]);
  }
}

TEST(Binarize, StrictThreshold) {
  const auto m = binarize(grid(1, 4, {0.5, 1.0, 0.51, 0.0}), 0.5);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 1, 1, 0}));
  EXPECT_EQ(binarize(grid(1, 1, {1.0}), 0.99)[0], 1);
}

TEST(FuseMasks, WorkedExample) {
  const auto y = fuse_masks(mask(2, 2, {1, 0, 0, 1}), mask(2, 2, {1, 1, 0, 0}), mask(2, 2, {0, 0, 1, 1}));
  EXPECT_EQ(y.data, (std::vector<std::uint8_t>{1, 0, 1, 0}));
}

TEST(FuseMasks, AllOrNothingAcceptance) {
  const auto c = mask(2, 2, {1, 0, 1, 1}), r = mask(2, 2, {0, 1, 0, 0});
  EXPECT_EQ(fuse_masks(mask(2, 2, {1, 1, 1, 1}), c, r), c);
  EXPECT_EQ(fuse_masks(mask(2, 2, {0, 0, 0, 0}), c, r), r);
}

TEST(FuseMasks, Errors) {
  const auto ok = mask(2, 2, {0, 1, 0, 1});
  EXPECT_THROW(fuse_masks(mask(2, 2, {0, 2, 0, 1}), ok, ok), DomainError);
  EXPECT_THROW(fuse_masks(ok, mask(2, 2, {0, 255, 0, 1}), ok), DomainError);
  EXPECT_THROW(fuse_masks(ok, ok, BinaryMask(2, 3)), ShapeError);
}

TEST(FuseMasks, PartitionAndLocality) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 1000; ++t) {
    const auto m = testutil::random_mask(4, 4, rng), c = testutil::random_mask(4, 4, rng),
               r = testutil::random_mask(4, 4, rng), r2 = testutil::random_mask(4, 4, rng);
    const auto y = fuse_masks(m, c, r), y2 = fuse_masks(m, c, r2);
    for (std::size_t i = 0; i < m.size(); ++i) {
      ASSERT_EQ(y[i] * m[i], c[i] * m[i]);
      ASSERT_EQ(y[i] * (1 - m[i]), r[i] * (1 - m[i]));
      if (m[i]) ASSERT_EQ(y[i], y2[i]);
    }
  }
}

TEST(ThresholdConfig, Ranges) {
  ThresholdConfig t;
  EXPECT_NO_THROW(t.validate());
  t.gamma = 1;
  EXPECT_NO_THROW(t.validate());
  t.gamma = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t.gamma = 1.01;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.tau_coarse = 1;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.tau_refined = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Modulate, ConstantGains) {
  std::mt19937_64 rng(5);
  const ag::Var f(testutil::random_tensor({4, 4, 3}, rng));
  const auto one = modulate(f, UncertaintyMap(4, 4, 1.0)).value();
  const auto zero = modulate(f, UncertaintyMap(4, 4, 0.0)).value();
  const auto half = modulate(f, UncertaintyMap(8, 8, 0.5)).value();
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i], f.value()[i]);
    EXPECT_EQ(zero[i], 0.0);
    EXPECT_EQ(half[i], f.value()[i] * 0.5);
  }
}

TEST(Modulate, GainBroadcastsOverChannelsAndScalesGradient) {
  std::mt19937_64 rng(6);
  ag::Var f = ag::Var::parameter(testutil::random_tensor({2, 2, 3}, rng));
  UncertaintyMap u(2, 2);
  u.data = {0.0, 0.25, 0.5, 1.0};
  const auto out = modulate(f, u);
  ag::backward(ag::sum(out));
  const Tensor g = f.grad();
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(out.value().at(y, x, c), f.value().at(y, x, c) * u.at(y, x));
        EXPECT_EQ(g.at(y, x, c), u.at(y, x));
      }
}

TEST(Modulate, OutOfRangeUncertaintyIsDomainError) {
  const ag::Var f(Tensor({2, 2, 1}, 1.0));
  EXPECT_THROW(modulate(f, UncertaintyMap(2, 2, 1.5)), DomainError);
}

TEST(Refiner, AggregateChannelAccounting) {
  CloudMambaNet net(small_config(3), 1);
  const auto s1 = net.forward_coarse(image(64, 64, 1));
  EXPECT_EQ(net.refiner().aggregator.in_channels(), 4 + 8 + 16);
  EXPECT_EQ(net.refiner().aggregate(s1.decoder_features).shape(), (std::vector<int>{8, 8, 32}));
}

TEST(Refiner, AggregateOfSingleLevel) {
  CloudMambaNet net(small_config(1), 1);
  const auto s1 = net.forward_coarse(image(8, 8, 2));
  EXPECT_EQ(net.refiner().aggregate(s1.decoder_features).shape(), (std::vector<int>{4, 4, 8}));
}

TEST(Refiner, AggregateOfConstantFeaturesIsConstant) {
  CloudMambaNet net(small_config(2), 1);
  const std::vector<ag::Var> feats{ag::Var(Tensor({16, 16, 4}, 0.3)), ag::Var(Tensor({8, 8, 8}, -1.2))};
  const Tensor out = net.refiner().aggregate(feats).value();
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < out.channels(); ++c) EXPECT_NEAR(out[p * out.channels() + c], out[c], 1e-14);
}

TEST(Refiner, AggregateRejectsEmptyOrWrongLevelCount) {
  CloudMambaNet net(small_config(2), 1);
  EXPECT_THROW(net.refiner().aggregate({}), ShapeError);
  EXPECT_THROW(net.refiner().aggregate({ag::Var(Tensor({16, 16, 4}))}), ShapeError);
}

TEST(Refiner, ZeroHeadGivesHalfAtFullResolution) {
  CloudMambaNet net(small_config(3), 1);
  auto& head = const_cast<Refiner&>(net.refiner()).decoder.head;
  head.weight.mutable_value().fill(0);
  head.bias.mutable_value().fill(0);
  const auto f = forward_train(net, image(64, 64, 3));
  EXPECT_EQ(f.refined.shape(), (std::vector<int>{64, 64, 1}));
  for (Real v : f.refined.value().storage()) ASSERT_EQ(v, 0.5);
}

TEST(Refiner, ParametersAreDisjointFromStageOne) {
  CloudMambaNet net(small_config(2), 1);
  const Tensor x = image(16, 16, 4);
  const auto before = forward_train(net, x);
  for (const auto& p : net.parameters().entries()) {
    if (p.name.rfind("refiner.", 0) != 0) continue;
    ag::Var v = p.var;
    for (auto& w : v.mutable_value().storage()) w += 0.25;
  }
  const auto after = forward_train(net, x);
  EXPECT_EQ(before.stage_one.coarse.value().storage(), after.stage_one.coarse.value().storage());
  EXPECT_NE(before.refined.value().storage(), after.refined.value().storage());
}

TEST(Refiner, NoGradientThroughUncertaintyIntoStageOneFromRefinedLossAlone) {
  CloudMambaNet net(small_config(2), 1);
  const auto f = forward_train(net, image(16, 16, 5));
  std::mt19937_64 rng(7);
  ag::backward(loss::seg_loss(f.refined, testutil::random_mask(16, 16, rng), loss::LossConfig{}));
  // The stage-one head only feeds P_c, which reaches the refiner solely through U.
  const Tensor stage_one = net.decoder.head.weight.grad();
  for (Real g : stage_one.storage()) EXPECT_EQ(g, 0.0);
  double refiner_norm = 0;
  const Tensor refiner = net.refiner().decoder.head.weight.grad();
  for (Real g : refiner.storage()) refiner_norm += g * g;
  EXPECT_GT(refiner_norm, 0);
}

TEST(ForwardFull, FusionIdentityForRandomWeights) {
  for (std::uint64_t seed : {1, 2, 3}) {
    CloudMambaNet net(small_config(2), seed);
    const auto s = forward_full(net, image(16, 16, seed + 10), ThresholdConfig{});
    for (std::size_t i = 0; i < s.fused.size(); ++i) {
      if (s.acceptance[i]) ASSERT_EQ(s.fused[i], s.coarse_mask[i]);
      else ASSERT_EQ(s.fused[i], s.refined_mask[i]);
      ASSERT_EQ(s.uncertainty[i], 1 - 2 * std::abs(s.coarse[i] - 0.5));
      ASSERT_TRUE(s.refined[i] >= 0 && s.refined[i] <= 1);
    }
  }
}

TEST(ForwardFull, ConfidentCoarseMapIsAcceptedEverywhere) {
  std::mt19937_64 rng(8);
  ThresholdConfig t;
  ProbabilityMap pc(8, 8);
  // |P_c − 0.5| > (1 − γ)/2 = 0.3 at every pixel.
  std::uniform_real_distribution<Real> lo(0.0, 0.19), hi(0.81, 1.0);
  std::bernoulli_distribution side(0.5);
  for (auto& v : pc.data) v = side(rng) ? hi(rng) : lo(rng);
  const auto s = assemble_stages(pc, dyadic_map(8, 8, rng), t);
  for (auto v : s.acceptance.data) ASSERT_EQ(v, 1);
  EXPECT_EQ(s.fused, s.coarse_mask);
}

TEST(ForwardFull, GammaOneReproducesCoarseMask) {
  CloudMambaNet net(small_config(2), 4);
  ThresholdConfig t;
  t.gamma = 1;
  const auto s = forward_full(net, image(16, 16, 9), t);
  for (std::size_t i = 0; i < s.fused.size(); ++i)
    if (s.coarse[i] != 0.5) ASSERT_EQ(s.fused[i], s.coarse_mask[i]);
}

TEST(ForwardFull, RepeatedCallsAreBitwiseIdentical) {
  CloudMambaNet net(small_config(2), 5);
  const Tensor x = image(16, 16, 10);
  const auto a = forward_full(net, x, ThresholdConfig{}), b = forward_full(net, x, ThresholdConfig{});
  EXPECT_EQ(a.coarse, b.coarse);
  EXPECT_EQ(a.refined, b.refined);
  EXPECT_EQ(a.fused, b.fused);
}

TEST(ForwardFull, WithoutRefinerRefinedMirrorsCoarse) {
  ModelConfig c = small_config(2);
  c.use_refiner = false;
  CloudMambaNet net(c, 6);
  const auto s = forward_full(net, image(16, 16, 11), ThresholdConfig{});
  EXPECT_EQ(s.refined, s.coarse);
  EXPECT_EQ(s.fused, s.coarse_mask);
  EXPECT_THROW(net.refiner(), ConfigError);
}

TEST(AssembleStages, RejectsMismatchedMaps) {
  EXPECT_THROW(assemble_stages(ProbabilityMap(2, 2, 0.5), ProbabilityMap(2, 3, 0.5), ThresholdConfig{}), ShapeError);
  EXPECT_THROW(assemble_stages(ProbabilityMap(2, 2, 0.5), ProbabilityMap(2, 2, 1.5), ThresholdConfig{}), DomainError);
}
