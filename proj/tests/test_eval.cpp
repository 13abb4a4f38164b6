#include <gtest/gtest.h>

#include <numeric>

#include "bdl/eval.hpp"
#include "eval_oracle.hpp"

using namespace bdl;

namespace {

GroundTruth gt(double x, double y, double w, double h, double occ = 0.0) { return {{x, y, w, h}, occ}; }

EvalCurve evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GroundTruth>>& gts) {
  std::vector<ImageMatch> per;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    per.push_back(match(dets[i], gts[i]));
    n += gts[i].size();
  }
  return curve(per, gts.size(), n);
}

double brute_force(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GroundTruth>>& gts) {
  std::vector<std::vector<oracle::Det>> d(dets.size());
  std::vector<std::vector<oracle::Box>> g(gts.size());
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (const auto& x : dets[i]) d[i].push_back({{x.box.x, x.box.y, x.box.w, x.box.h}, x.score});
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (const auto& x : gts[i]) g[i].push_back({x.box.x, x.box.y, x.box.w, x.box.h});
  return oracle::lamr(d, g);
}

}  // namespace

TEST(Reasonable, HeightAndOcclusionBoundaries) {
  const auto kept = reasonable_filter({gt(0, 0, 16, 49), gt(0, 0, 17, 50), gt(0, 0, 27, 80, 0.4),
                                       gt(0, 0, 27, 80, 0.35)});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].box.h, 50.0);
  EXPECT_EQ(kept[1].occlusion, 0.35);
}

TEST(Match, IdenticalBoxes) {
  const auto m = match({{{0, 0, 10, 30}, 0.9}}, {gt(0, 0, 10, 30)});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.missed, 0u);
}

TEST(Match, OneThirdOverlapIsAMiss) {
  // IoU = 50 / 150
  const auto m = match({{{5, 0, 10, 10}, 0.9}}, {gt(0, 0, 10, 10)});
  EXPECT_EQ(m.tp, 0u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.missed, 1u);
}

TEST(Match, SecondDetectionOnSameTruthIsFalsePositive) {
  const auto m = match({{{0, 0, 10, 30}, 0.9}, {{1, 0, 10, 30}, 0.8}}, {gt(0, 0, 10, 30)});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_TRUE(m.hits[0].true_positive);
  EXPECT_FALSE(m.hits[1].true_positive);
}

TEST(Match, PrefersHighestOverlap) {
  // The detection overlaps truth 1 better; truth 0 stays free for the next detection.
  const auto m = match({{{2, 0, 10, 30}, 0.9}, {{0, 0, 10, 30}, 0.8}}, {gt(0, 0, 10, 30), gt(2, 0, 10, 30)});
  EXPECT_EQ(m.tp, 2u);
}

TEST(Curve, NoDetectionsGivesOne) {
  const auto c = evaluate({{}, {}}, {{gt(0, 0, 20, 60)}, {}});
  EXPECT_TRUE(c.points.empty());
  EXPECT_EQ(c.lamr, 1.0);
}

TEST(Curve, PerfectDetectorHitsTheFloor) {
  const auto c = evaluate({{{{0, 0, 20, 60}, 0.9}}}, {{gt(0, 0, 20, 60)}});
  EXPECT_NEAR(c.lamr, 1e-10, 1e-22);
}

TEST(Curve, HandExampleHalf) {
  // 2 images, 2 GT; one TP at 0.9 and one FP at 0.8.
  const std::vector<std::vector<Detection>> dets = {{{{0, 0, 20, 60}, 0.9}}, {{{100, 0, 20, 60}, 0.8}}};
  const std::vector<std::vector<GroundTruth>> gts = {{gt(0, 0, 20, 60)}, {gt(30, 0, 20, 60)}};
  const auto c = evaluate(dets, gts);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].fppi, 0.0);
  EXPECT_EQ(c.points[0].miss_rate, 0.5);
  EXPECT_EQ(c.points[1].fppi, 0.5);
  EXPECT_EQ(c.points[1].miss_rate, 0.5);
  EXPECT_NEAR(c.lamr, 0.5, 1e-12);
  EXPECT_NEAR(c.lamr, brute_force(dets, gts), 1e-12);
  ASSERT_EQ(c.reference.size(), 9u);
  EXPECT_NEAR(c.reference[0].first, 0.01, 1e-15);
  EXPECT_NEAR(c.reference[8].first, 1.0, 1e-15);
}

TEST(Curve, RejectsNoGroundTruth) {
  EXPECT_THROW(curve({}, 1, 0), Error);
}

TEST(Curve, TiedScoresFormOnePoint) {
  const std::vector<std::vector<Detection>> dets = {{{{0, 0, 20, 60}, 0.7}, {{50, 0, 20, 60}, 0.7}}};
  const auto c = evaluate(dets, {{gt(0, 0, 20, 60)}});
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.points[0].fppi, 1.0);
  EXPECT_EQ(c.points[0].miss_rate, 0.0);
}

// Property: the single-pass sweep agrees with brute-force threshold
// enumeration on random scenes, lamr is invariant to duplicating the
// dataset, and raising a true positive's score never raises lamr.
TEST(Curve, AgreesWithBruteForceOnRandomScenes) {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t images = 1 + rng.below(6);
    std::vector<std::vector<Detection>> dets(images);
    std::vector<std::vector<GroundTruth>> gts(images);
    std::size_t total = 0;
    for (std::size_t i = 0; i < images; ++i) {
      for (std::size_t g = 0, n = rng.below(4); g < n; ++g)
        gts[i].push_back(gt(std::floor(rng.uniform(0, 100)), std::floor(rng.uniform(0, 40)), 20, 60));
      total += gts[i].size();
      for (std::size_t d = 0, n = rng.below(8); d < n; ++d) {
        BBox b{std::floor(rng.uniform(0, 100)), std::floor(rng.uniform(0, 40)), 20, 60};
        if (!gts[i].empty() && rng.uniform() < 0.5) {
          b = gts[i][rng.below(gts[i].size())].box;
          b.x += std::floor(rng.uniform(-4, 4));
        }
        dets[i].push_back({b, std::round(rng.uniform() * 20) / 20});  // coarse scores create ties
      }
    }
    if (total == 0) continue;
    const auto c = evaluate(dets, gts);
    ASSERT_NEAR(c.lamr, brute_force(dets, gts), 1e-12) << "trial " << trial;

    auto dets2 = dets;
    auto gts2 = gts;
    dets2.insert(dets2.end(), dets.begin(), dets.end());
    gts2.insert(gts2.end(), gts.begin(), gts.end());
    ASSERT_NEAR(evaluate(dets2, gts2).lamr, c.lamr, 1e-12);

    for (std::size_t i = 0; i < images; ++i) {
      // hits come back in detection_order; map them to input indices
      std::vector<std::size_t> order(dets[i].size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return detection_order(dets[i][a], dets[i][b]); });
      const auto m = match(dets[i], gts[i]);
      for (std::size_t k = 0; k < m.hits.size(); ++k) {
        const Detection& d = dets[i][order[k]];
        const auto overlapping = std::count_if(gts[i].begin(), gts[i].end(),
                                               [&](const GroundTruth& g) { return iou(d.box, g.box) >= 0.5; });
        // with a single candidate truth the boosted detection cannot be re-routed
        if (!m.hits[k].true_positive || overlapping != 1) continue;
        auto boosted = dets;
        boosted[i][order[k]].score = 1.5;
        ASSERT_LE(evaluate(boosted, gts).lamr, c.lamr + 1e-12) << "trial " << trial;
      }
    }
  }
}

TEST(Curve, OperatingPointsAreMonotone) {
  Rng rng(5);
  std::vector<std::vector<Detection>> dets(3);
  std::vector<std::vector<GroundTruth>> gts(3);
  for (std::size_t i = 0; i < 3; ++i) {
    gts[i] = {gt(10, 10, 20, 60), gt(60, 10, 20, 60)};
    for (int d = 0; d < 10; ++d) dets[i].push_back({{rng.uniform(0, 80), 10, 20, 60}, rng.uniform()});
  }
  const auto c = evaluate(dets, gts);
  for (std::size_t k = 1; k < c.points.size(); ++k) {
    EXPECT_GE(c.points[k].fppi, c.points[k - 1].fppi);
    EXPECT_LE(c.points[k].miss_rate, c.points[k - 1].miss_rate);
    EXPECT_LT(c.points[k].threshold, c.points[k - 1].threshold);
  }
}
