#pragma once

// Exhaustive multi-scale sliding-window detection.

#include <cmath>

#include "bdl/channels.hpp"
#include "bdl/net.hpp"

namespace bdl {

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct Detection {
  BBox box;
  double score = 0.0;
};

struct DetectParams {
  std::size_t stride = 4;
  double scale_step = 1.2;
  double score_thresh = 0.5;
  double nms_iou = 0.5;

  void validate() const {
    require(stride >= 1, "detect: stride must be >= 1");
    require(scale_step > 1.0, "detect: scale_step must be > 1");
    require(nms_iou > 0.0 && nms_iou <= 1.0, "detect: nms_iou must be in (0,1]");
  }
};

struct PyramidLevel {
  double scale = 1.0;
  Tensor image;  // [3, floor(H*scale), floor(W*scale)]
};

/// Levels at scales 1, 1/s, 1/s^2, ... while the level still holds a window.
inline std::vector<PyramidLevel> build_pyramid(const Tensor& image, double scale_step, std::size_t window_h,
                                               std::size_t window_w) {
  require(image.rank() == 3 && image.dim(0) == 3, "build_pyramid: expected [3,H,W], got " + image.shape_string());
  require(scale_step > 1.0, "build_pyramid: scale_step must be > 1");
  const std::size_t h = image.dim(1), w = image.dim(2);
  require(h >= window_h && w >= window_w,
          "build_pyramid: image " + std::to_string(h) + "x" + std::to_string(w) +
              " is smaller than the model window " + std::to_string(window_h) + "x" + std::to_string(window_w));
  std::vector<PyramidLevel> levels;
  for (double scale = 1.0;; scale /= scale_step) {
    // The epsilon keeps exact products such as 84 * 1.0 from flooring down.
    const auto lh = static_cast<std::size_t>(std::floor(static_cast<double>(h) * scale + 1e-9));
    const auto lw = static_cast<std::size_t>(std::floor(static_cast<double>(w) * scale + 1e-9));
    if (lh < window_h || lw < window_w) break;
    levels.push_back({scale, resize_bilinear(image, lh, lw)});
  }
  return levels;
}

inline std::size_t orientation_bins(const NetConfig& cfg) {
  require(cfg.in_channels > 4, "network input must have more than 4 channels");
  return cfg.in_channels - 4;
}

/// Scores every window of one level; boxes are returned in source-image
/// coordinates (divided by the level scale, clipped to source_h x source_w),
/// in (y, x) order.
inline std::vector<Detection> scan(const PyramidLevel& level, const Network& net, const DetectParams& params,
                                   std::size_t source_h, std::size_t source_w) {
  const auto& cfg = net.config;
  const std::size_t wh = cfg.window_h, ww = cfg.window_w;
  const std::size_t h = level.image.dim(1), w = level.image.dim(2);
  std::vector<Detection> out;
  if (h < wh || w < ww) return out;
  const std::size_t bins = orientation_bins(cfg);
  for (std::size_t y = 0; y + wh <= h; y += params.stride) {
    for (std::size_t x = 0; x + ww <= w; x += params.stride) {
      const double s = score(net, extract_stack(crop(level.image, y, x, wh, ww), wh, ww, bins));
      if (s < params.score_thresh) continue;
      const double x0 = std::clamp(static_cast<double>(x) / level.scale, 0.0, static_cast<double>(source_w));
      const double y0 = std::clamp(static_cast<double>(y) / level.scale, 0.0, static_cast<double>(source_h));
      const double x1 = std::clamp(static_cast<double>(x + ww) / level.scale, 0.0, static_cast<double>(source_w));
      const double y1 = std::clamp(static_cast<double>(y + wh) / level.scale, 0.0, static_cast<double>(source_h));
      out.push_back({{x0, y0, x1 - x0, y1 - y0}, s});
    }
  }
  return out;
}

/// Score descending, ties by smaller x then smaller y.
inline bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.w != b.box.w) return a.box.w < b.box.w;
  return a.box.h < b.box.h;
}

/// Greedy suppression: keep a detection iff its IoU with every kept one is below the threshold.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.5) {
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool clear = std::all_of(kept.begin(), kept.end(),
                                   [&](const Detection& k) { return iou(k.box, d.box) < iou_thresh; });
    if (clear) kept.push_back(d);
  }
  return kept;
}

inline std::vector<Detection> detect(const Tensor& image, const Network& net, const DetectParams& params) {
  params.validate();
  std::vector<Detection> all;
  for (const auto& level : build_pyramid(image, params.scale_step, net.config.window_h, net.config.window_w)) {
    auto dets = scan(level, net, params, image.dim(1), image.dim(2));
    all.insert(all.end(), dets.begin(), dets.end());
  }
  return nms(std::move(all), params.nms_iou);
}

}  // namespace bdl
