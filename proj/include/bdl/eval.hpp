#pragma once

// Miss rate vs. false positives per image, and its log-average summary.
//
// Detections are matched greedily per image in descending score order, each
// to its highest-IoU unmatched ground truth with IoU >= 0.5. Because later
// detections never change earlier matches, one matching serves every
// threshold of the sweep. The log-average miss rate samples the curve at
// nine FPPI points 10^(-2 + k/4), k = 0..8:
//   mr(f) = min miss rate over points with fppi <= f (1 if there are none)
//   lamr  = exp(mean_k ln(max(mr(f_k), 1e-10)))
// Ignore regions are not modelled.

#include <cmath>

#include "bdl/detect.hpp"

namespace bdl {

inline constexpr std::size_t kReferencePoints = 9;
inline constexpr double kMissRateFloor = 1e-10;

struct GroundTruth {
  BBox box;
  double occlusion = 0.0;
};

struct ReasonableSubset {
  double min_height = 50.0;
  double max_occlusion = 0.35;
};

inline std::vector<GroundTruth> reasonable_filter(const std::vector<GroundTruth>& gts,
                                                  const ReasonableSubset& rule = {}) {
  std::vector<GroundTruth> out;
  std::copy_if(gts.begin(), gts.end(), std::back_inserter(out), [&](const GroundTruth& g) {
    return g.box.h >= rule.min_height && g.occlusion <= rule.max_occlusion;
  });
  return out;
}

struct ScoredHit {
  double score = 0.0;
  bool true_positive = false;
};

struct ImageMatch {
  std::vector<ScoredHit> hits;  // one per detection, in match order
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t missed = 0;
};

inline ImageMatch match(std::vector<Detection> dets, const std::vector<GroundTruth>& gts, double iou_thresh = 0.5) {
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  std::vector<bool> taken(gts.size(), false);
  ImageMatch m;
  for (const auto& d : dets) {
    std::ptrdiff_t best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(d.box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<std::ptrdiff_t>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++m.tp;
    } else {
      ++m.fp;
    }
    m.hits.push_back({d.score, best >= 0});
  }
  m.missed = gts.size() - m.tp;
  return m;
}

struct OperatingPoint {
  double threshold = 0.0;
  double fppi = 0.0;
  double miss_rate = 1.0;
};

struct EvalCurve {
  std::vector<OperatingPoint> points;  // fppi ascending
  std::vector<std::pair<double, double>> reference;  // (f, mr(f)) at the nine FPPI points
  double lamr = 1.0;
};

inline std::array<double, kReferencePoints> reference_fppi() {
  std::array<double, kReferencePoints> f{};
  for (std::size_t k = 0; k < kReferencePoints; ++k) f[k] = std::pow(10.0, -2.0 + static_cast<double>(k) / 4.0);
  return f;
}

/// mr(f) over a set of operating points.
inline double miss_rate_at(const std::vector<OperatingPoint>& points, double f) {
  double mr = 1.0;
  bool any = false;
  for (const auto& p : points) {
    if (p.fppi <= f) {
      mr = any ? std::min(mr, p.miss_rate) : p.miss_rate;
      any = true;
    }
  }
  return mr;
}

inline EvalCurve curve(const std::vector<ImageMatch>& per_image, std::size_t num_images, std::size_t num_gt) {
  require(num_images >= 1, "curve: need at least one image");
  require(num_gt >= 1, "curve: no ground truth, miss rate undefined");
  std::vector<ScoredHit> hits;
  for (const auto& m : per_image) hits.insert(hits.end(), m.hits.begin(), m.hits.end());
  std::stable_sort(hits.begin(), hits.end(), [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });

  EvalCurve c;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    (hits[i].true_positive ? tp : fp) += 1;
    if (i + 1 < hits.size() && hits[i + 1].score == hits[i].score) continue;
    c.points.push_back({hits[i].score, static_cast<double>(fp) / static_cast<double>(num_images),
                        1.0 - static_cast<double>(tp) / static_cast<double>(num_gt)});
  }
  double log_sum = 0.0;
  for (double f : reference_fppi()) {
    const double mr = miss_rate_at(c.points, f);
    c.reference.emplace_back(f, mr);
    log_sum += std::log(std::max(mr, kMissRateFloor));
  }
  c.lamr = std::exp(log_sum / static_cast<double>(kReferencePoints));
  return c;
}

}  // namespace bdl
