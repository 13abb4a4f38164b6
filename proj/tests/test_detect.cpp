#include <gtest/gtest.h>

#include "bdl/detect.hpp"

using namespace bdl;

namespace {

Tensor gray_image(std::size_t h, std::size_t w, double v = 0.4) { return Tensor({3, h, w}, v); }

Network zero_net(const NetConfig& cfg) { return {cfg, ParamSet::zeros(cfg)}; }

}  // namespace

TEST(Iou, HandExamples) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 2, 2}), 1.0 / 3.0);
  EXPECT_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_EQ(iou({0, 0, 2, 2}, {2, 0, 2, 2}), 0.0);  // touching edges
  EXPECT_EQ(iou({0, 0, 4, 4}, {1, 1, 2, 2}), 0.25);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const BBox a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    const BBox b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    const double o = iou(a, b);
    ASSERT_EQ(o, iou(b, a));
    ASSERT_GE(o, 0.0);
    ASSERT_LE(o, 1.0);
  }
}

TEST(Pyramid, LevelsForSyntheticImage) {
  const auto levels = build_pyramid(gray_image(168, 56), 1.2, 84, 28);
  ASSERT_EQ(levels.size(), 4u);  // 168/1.2^4 = 81 < 84
  const double want[] = {1.0, 1 / 1.2, 1 / 1.44, 1 / 1.728};
  const std::size_t heights[] = {168, 140, 116, 97};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(levels[i].scale, want[i], 1e-12);
    EXPECT_EQ(levels[i].image.dim(1), heights[i]);
  }
  EXPECT_EQ(levels[1].image.dim(2), 46u);
}

TEST(Pyramid, RejectsImageSmallerThanWindow) {
  EXPECT_THROW(build_pyramid(gray_image(80, 56), 1.2, 84, 28), Error);
  EXPECT_THROW(build_pyramid(gray_image(100, 56), 1.0, 84, 28), Error);
}

TEST(Scan, WindowCountAndCoordinates) {
  const NetConfig cfg = NetConfig::full();
  const Network net = zero_net(cfg);
  DetectParams p;
  const PyramidLevel level{1.0, gray_image(88, 32)};
  const auto dets = scan(level, net, p, 88, 32);
  ASSERT_EQ(dets.size(), 4u);  // y in {0,4}, x in {0,4}
  EXPECT_EQ(dets[0].box, (BBox{0, 0, 28, 84}));
  EXPECT_EQ(dets[1].box, (BBox{4, 0, 28, 84}));
  EXPECT_EQ(dets[3].box, (BBox{4, 4, 28, 84}));
  for (const auto& d : dets) EXPECT_EQ(d.score, 0.5);
}

TEST(Scan, BoxesMappedBackToSourceScale) {
  const NetConfig cfg = NetConfig::desk();
  const Network net = zero_net(cfg);
  DetectParams p;
  p.stride = 100;  // one window per level
  const PyramidLevel level{0.5, gray_image(42, 14)};
  const auto dets = scan(level, net, p, 84, 28);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, (BBox{0, 0, 28, 84}));
}

TEST(Scan, ThresholdDropsLowScores) {
  const NetConfig cfg = NetConfig::desk();
  Network net = zero_net(cfg);
  net.params.fc_bias[0] = -1.0;  // every score sigmoid(-1) < 0.5
  const PyramidLevel level{1.0, gray_image(42, 14)};
  EXPECT_TRUE(scan(level, net, DetectParams{}, 42, 14).empty());
  DetectParams low;
  low.score_thresh = 0.2;
  EXPECT_EQ(scan(level, net, low, 42, 14).size(), 1u);
}

TEST(Nms, HandExample) {
  const std::vector<Detection> dets = {
      {{0, 0, 10, 10}, 0.9}, {{1, 0, 10, 10}, 0.8}, {{20, 0, 10, 10}, 0.7}, {{2, 0, 10, 10}, 0.95}};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.95);
  EXPECT_EQ(kept[1].score, 0.7);
}

TEST(Nms, TiesBrokenBySmallerXThenY) {
  const std::vector<Detection> dets = {{{1, 0, 10, 10}, 0.5}, {{0, 3, 10, 10}, 0.5}, {{0, 1, 10, 10}, 0.5}};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box, (BBox{0, 1, 10, 10}));
}

TEST(Nms, KeptSetIsPairwiseSeparated) {
  Rng rng(4);
  std::vector<Detection> dets;
  for (int i = 0; i < 300; ++i)
    dets.push_back({{rng.uniform(0, 50), rng.uniform(0, 50), 10, 30}, rng.uniform()});
  const auto kept = nms(dets, 0.5);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i > 0) {
      ASSERT_GE(kept[i - 1].score, kept[i].score);
    }
    for (std::size_t j = i + 1; j < kept.size(); ++j) ASSERT_LT(iou(kept[i].box, kept[j].box), 0.5);
  }
  // every dropped detection overlaps some kept one of at least its score
  for (const auto& d : dets) {
    const bool is_kept = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return k.box == d.box; });
    if (is_kept) continue;
    ASSERT_TRUE(std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.score >= d.score && iou(k.box, d.box) >= 0.5;
    }));
  }
}

TEST(Detect, ZeroNetworkKeepsSeparatedWindows) {
  const NetConfig cfg = NetConfig::desk();
  const auto dets = detect(gray_image(84, 28), zero_net(cfg), DetectParams{});
  ASSERT_FALSE(dets.empty());
  for (const auto& d : dets) EXPECT_EQ(d.score, 0.5);
  EXPECT_EQ(dets[0].box, (BBox{0, 0, 14, 42}));  // first in (x, y) order at scale 1
}

TEST(Detect, DeterministicOutput) {
  const NetConfig cfg = NetConfig::desk();
  Rng rng(3);
  const Network net = init(cfg, rng);
  Tensor img({3, 60, 30});
  for (double& v : img.values()) v = rng.uniform();
  DetectParams p;
  p.score_thresh = 0.0;
  const auto a = detect(img, net, p), b = detect(img, net, p);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].score, b[i].score);
  }
}

TEST(DetectParams, Validation) {
  DetectParams p;
  p.stride = 0;
  EXPECT_THROW(p.validate(), Error);
  p = DetectParams{};
  p.scale_step = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = DetectParams{};
  p.nms_iou = 0.0;
  EXPECT_THROW(p.validate(), Error);
}
