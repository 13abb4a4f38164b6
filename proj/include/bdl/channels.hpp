#pragma once

// Ten-plane channel stack for one detection window:
//   [L, U, V, |G|, G1 .. G6]
// LUV is CIE 1976 L*u*v* of the sRGB input (D65). Gradients are central
// differences on L with replicated borders, orientation is unsigned in
// [0, pi) and hard-binned so the orientation planes partition |G| exactly.
// Every plane is then standardized to zero mean / unit variance on its own.

#include <cmath>
#include <numbers>

#include "bdl/numerics.hpp"

namespace bdl {

inline constexpr std::size_t kDefaultOrientationBins = 6;
inline constexpr double kFlatChannelStd = 1e-12;

struct ChannelStack {
  Tensor channels;  // [4 + bins, H, W]

  std::size_t height() const { return channels.dim(1); }
  std::size_t width() const { return channels.dim(2); }
};

namespace luv {

// sRGB primaries, D65 (IEC 61966-2-1).
inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline std::array<double, 3> to_xyz(double r, double g, double b) {
  const double lin[3] = {srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)};
  std::array<double, 3> xyz{};
  for (int i = 0; i < 3; ++i)
    xyz[i] = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
  return xyz;
}

/// Reference white is the image of sRGB (1,1,1), so white maps to (100,0,0) exactly.
inline std::array<double, 3> pixel(double r, double g, double b) {
  static const std::array<double, 3> white = to_xyz(1.0, 1.0, 1.0);
  static const double white_denom = white[0] + 15.0 * white[1] + 3.0 * white[2];
  static const double un = 4.0 * white[0] / white_denom;
  static const double vn = 9.0 * white[1] / white_denom;
  constexpr double eps = (6.0 / 29.0) * (6.0 / 29.0) * (6.0 / 29.0);
  constexpr double kappa = (29.0 / 3.0) * (29.0 / 3.0) * (29.0 / 3.0);

  const auto [x, y, z] = to_xyz(r, g, b);
  const double yr = y / white[1];
  const double l = yr > eps ? 116.0 * std::cbrt(yr) - 16.0 : kappa * yr;
  const double denom = x + 15.0 * y + 3.0 * z;
  if (denom <= 0.0) return {l, 0.0, 0.0};
  const double up = 4.0 * x / denom;
  const double vp = 9.0 * y / denom;
  return {l, 13.0 * l * (up - un), 13.0 * l * (vp - vn)};
}

}  // namespace luv

/// sRGB in [0,1] -> L*u*v*. L in [0,100].
inline Tensor rgb_to_luv(const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3,
          "rgb_to_luv: expected [3,H,W], got " + image.shape_string());
  for (double v : image.values())
    require(v >= 0.0 && v <= 1.0, "rgb_to_luv: component out of [0,1]: " + std::to_string(v));
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto p = luv::pixel(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x));
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = p[c];
    }
  }
  return out;
}

struct GradientChannels {
  Tensor magnitude;    // [H,W]
  Tensor orientation;  // [bins,H,W]
};

inline GradientChannels gradient_channels(const Tensor& gray, std::size_t bins = kDefaultOrientationBins) {
  require(gray.rank() == 2, "gradient_channels: expected [H,W], got " + gray.shape_string());
  require(bins >= 1, "gradient_channels: bins must be positive");
  const std::size_t h = gray.dim(0), w = gray.dim(1);
  require(h >= 3 && w >= 3, "gradient_channels: image must be at least 3x3");

  GradientChannels out{Tensor({h, w}), Tensor({bins, h, w})};
  const double bin_width = std::numbers::pi / static_cast<double>(bins);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y == 0 ? 0 : y - 1, yp = y + 1 == h ? y : y + 1;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x == 0 ? 0 : x - 1, xp = x + 1 == w ? x : x + 1;
      const double gx = (gray.at(y, xp) - gray.at(y, xm)) / 2.0;
      const double gy = (gray.at(yp, x) - gray.at(ym, x)) / 2.0;
      const double mag = std::sqrt(gx * gx + gy * gy);
      double theta = std::atan2(gy, gx);
      if (theta < 0.0) theta += std::numbers::pi;
      if (theta >= std::numbers::pi) theta -= std::numbers::pi;
      const auto bin = std::min(static_cast<std::size_t>(theta / bin_width), bins - 1);
      out.magnitude.at(y, x) = mag;
      out.orientation.at(bin, y, x) = mag;
    }
  }
  return out;
}

/// (c - mean) / std with population std; flat channels become all zeros.
inline Tensor normalize_channel(const Tensor& c) {
  if (c.empty()) return c;
  const double n = static_cast<double>(c.size());
  const double mean = sum(c.values()) / n;
  double ss = 0.0;
  for (double v : c.values()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  Tensor out(c.shape());
  if (sd < kFlatChannelStd) return out;
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = (c[i] - mean) / sd;
  return out;
}

/// The stack before standardization (LUV, |G|, orientation planes).
inline Tensor raw_channels(const Tensor& image, std::size_t bins = kDefaultOrientationBins) {
  const Tensor luv_img = rgb_to_luv(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  const auto grad = gradient_channels(luv_img.slice(0), bins);
  Tensor out({4 + bins, h, w});
  auto put = [&](std::size_t dst, std::span<const double> src) {
    std::copy(src.begin(), src.end(), out.plane(dst).begin());
  };
  for (std::size_t c = 0; c < 3; ++c) put(c, luv_img.plane(c));
  put(3, grad.magnitude.values());
  for (std::size_t b = 0; b < bins; ++b) put(4 + b, grad.orientation.plane(b));
  return out;
}

inline ChannelStack extract_stack(const Tensor& image, std::size_t window_h, std::size_t window_w,
                                  std::size_t bins = kDefaultOrientationBins) {
  require(image.rank() == 3 && image.dim(0) == 3,
          "extract_stack: expected [3,H,W] image, got " + image.shape_string());
  require(image.dim(1) == window_h && image.dim(2) == window_w,
          "extract_stack: window must be " + std::to_string(window_h) + "x" +
              std::to_string(window_w) + ", got " + std::to_string(image.dim(1)) + "x" +
              std::to_string(image.dim(2)));
  Tensor raw = raw_channels(image, bins);
  for (std::size_t c = 0; c < raw.dim(0); ++c) {
    const Tensor n = normalize_channel(raw.slice(c));
    std::copy(n.values().begin(), n.values().end(), raw.plane(c).begin());
  }
  return ChannelStack{std::move(raw)};
}

}  // namespace bdl
