#include <gtest/gtest.h>

#include "bdl/net.hpp"
#include "bdl/reference.hpp"

using namespace bdl;

namespace {

ChannelStack random_stack(const NetConfig& cfg, Rng& rng) {
  Tensor t({cfg.in_channels, cfg.window_h, cfg.window_w});
  for (double& v : t.values()) v = rng.uniform(-2.0, 2.0);
  return {t};
}

NetConfig tiny() {
  NetConfig c;
  c.window_h = 2;
  c.window_w = 2;
  c.in_channels = 1;
  c.c2_maps = 1;
  c.c2_kernel = 1;
  c.pool = 2;
  c.c4_bank = {{1, 1, 1}};
  return c;
}

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

}  // namespace

TEST(NetConfig, FullGeometry) {
  const NetConfig c = NetConfig::full();
  EXPECT_EQ(c.pooled_h(), 21u);
  EXPECT_EQ(c.pooled_w(), 7u);
  EXPECT_EQ(c.c4_filters(), 20u);
  EXPECT_EQ(c.fc_in(), 565u);  // 15*7*4 + 4*7*5 + 1*5*1
  EXPECT_NO_THROW(c.validate());
}

TEST(NetConfig, DeskGeometryKeepsClassifierShape) {
  const NetConfig c = NetConfig::desk();
  EXPECT_EQ(c.pooled_h(), 21u);
  EXPECT_EQ(c.pooled_w(), 7u);
  EXPECT_EQ(c.fc_in(), 565u);
  EXPECT_NO_THROW(c.validate());
}

TEST(NetConfig, ParameterCounts) {
  const ParamCount p = param_count(NetConfig::full());
  EXPECT_EQ(p.c2, 51904u);  // 64 * (10 * 81 + 1)
  EXPECT_EQ(p.s3, 128u);
  EXPECT_EQ(p.c4, 76756u);  // 15*(64*60+1) + 4*(64*45+1) + (64*119+1)
  EXPECT_EQ(p.fc, 566u);
  EXPECT_EQ(p.total(), 129354u);
}

TEST(NetConfig, ValidateNamesTheViolation) {
  NetConfig c;
  c.c2_kernel = 8;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("c2_kernel"), std::string::npos);
  }
  c = NetConfig{};
  c.pool = 5;
  EXPECT_THROW(c.validate(), Error);
  c = NetConfig{};
  c.c4_bank[2].kh = 22;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("c4_bank[2]"), std::string::npos);
  }
  c = NetConfig{};
  c.fc_out = 2;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Init, GlorotRangesAndPoolScale) {
  Rng rng(1);
  const NetConfig cfg = NetConfig::full();
  const Network net = init(cfg, rng);
  const double c2_limit = std::sqrt(6.0 / (10.0 * 81 + 64.0 * 81));
  for (double v : net.params.c2_weight.values()) ASSERT_LE(std::abs(v), c2_limit);
  for (double v : net.params.s3_beta.values()) EXPECT_EQ(v, 1.0 / 16.0);
  for (double v : net.params.c2_bias.values()) EXPECT_EQ(v, 0.0);
  for (const auto& b : net.params.c4_bias)
    for (double v : b.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(net.params.fc_bias[0], 0.0);
}

TEST(Init, SeededAndDeterministic) {
  Rng a(5), b(5), c(6);
  const NetConfig cfg = NetConfig::desk();
  const Network na = init(cfg, a), nb = init(cfg, b), nc = init(cfg, c);
  EXPECT_TRUE(na.params.c2_weight == nb.params.c2_weight);
  EXPECT_TRUE(na.params.fc_weight == nb.params.fc_weight);
  EXPECT_FALSE(na.params.c2_weight == nc.params.c2_weight);
}

TEST(Forward, ZeroNetworkScoresOneHalf) {
  const NetConfig cfg = NetConfig::desk();
  const Network net{cfg, ParamSet::zeros(cfg)};
  Rng rng(3);
  EXPECT_EQ(score(net, random_stack(cfg, rng)), 0.5);
}

TEST(Forward, HandComputedTinyNetwork) {
  const NetConfig cfg = tiny();
  Network net{cfg, ParamSet::zeros(cfg)};
  net.params.s3_beta[0] = 0.25;
  net.params.c4_weight[0][0] = 1.0;
  net.params.fc_weight[0] = 1.0;
  // c2 = sigmoid(0) = 0.5 everywhere, s3 = sigmoid(0.25 * 4 * 0.5)
  const double expected = logistic(logistic(logistic(0.5)));
  const auto t = forward(net, {Tensor({1, 2, 2}, 3.0)});
  EXPECT_NEAR(t.score, expected, 1e-15);
  EXPECT_EQ(t.s3_sum[0], 2.0);
}

TEST(Forward, ShapesOfTrace) {
  const NetConfig cfg = NetConfig::desk();
  Rng rng(4);
  const Network net = init(cfg, rng);
  const auto t = forward(net, random_stack(cfg, rng));
  EXPECT_EQ(t.c2_out.shape(), (Tensor::Shape{8, 42, 14}));
  EXPECT_EQ(t.s3_out.shape(), (Tensor::Shape{8, 21, 7}));
  EXPECT_EQ(t.c4_out[0].shape(), (Tensor::Shape{15, 7, 4}));
  EXPECT_EQ(t.c4_out[1].shape(), (Tensor::Shape{4, 7, 5}));
  EXPECT_EQ(t.c4_out[2].shape(), (Tensor::Shape{1, 5, 1}));
  EXPECT_EQ(t.fc_in.size(), 565u);
  EXPECT_GT(t.score, 0.0);
  EXPECT_LT(t.score, 1.0);
}

TEST(Forward, RejectsWrongInputShape) {
  const NetConfig cfg = NetConfig::desk();
  const Network net{cfg, ParamSet::zeros(cfg)};
  EXPECT_THROW(score(net, {Tensor({10, 42, 13})}), Error);
  EXPECT_THROW(score(net, {Tensor({9, 42, 14})}), Error);
}

TEST(Forward, AgreesWithNaiveLoops) {
  for (const NetConfig& cfg : {NetConfig::desk(), NetConfig::full()}) {
    Rng rng(7);
    Network net = init(cfg, rng);
    for (double& v : net.params.c2_bias.values()) v = rng.uniform(-0.5, 0.5);
    for (double& v : net.params.s3_bias.values()) v = rng.uniform(-0.5, 0.5);
    const ChannelStack s = random_stack(cfg, rng);
    const reference::Forward<long double> ref(net, s.channels);
    EXPECT_NEAR(score(net, s), static_cast<double>(ref.score()), 1e-12);
  }
}

TEST(Propagate, PartialRecomputeMatchesFull) {
  const NetConfig cfg = NetConfig::desk();
  Rng rng(9);
  Network net = init(cfg, rng);
  const ChannelStack s = random_stack(cfg, rng);
  ForwardTrace t = forward(net, s);
  net.params.c4_weight[1][3] += 0.3;
  propagate(net, t, Stage::c4);
  EXPECT_EQ(t.score, score(net, s));
  net.params.s3_beta[2] *= 1.7;
  propagate(net, t, Stage::s3);
  EXPECT_EQ(t.score, score(net, s));
}

TEST(ParamSet, CanonicalOrder) {
  std::vector<std::string> names;
  const ParamSet p = ParamSet::zeros(NetConfig::full());
  p.for_each([&](const std::string& n, const Tensor&) { names.push_back(n); });
  const std::vector<std::string> want = {"c2.weight", "c2.bias",   "s3.beta",   "s3.bias",   "c4.0.weight",
                                         "c4.0.bias", "c4.1.weight", "c4.1.bias", "c4.2.weight", "c4.2.bias",
                                         "fc.weight", "fc.bias"};
  EXPECT_EQ(names, want);
}
