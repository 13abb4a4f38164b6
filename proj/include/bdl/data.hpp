#pragma once

// Datasets on disk:
//   <dir>/images/<stem>.ppm|.pgm        binary P6 / P5
//   <dir>/annotations/<stem>.txt        lines "person x y w h [occlusion]"
// plus window sampling for training and a seeded synthetic scene generator.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "bdl/channels.hpp"
#include "bdl/digest.hpp"
#include "bdl/eval.hpp"
#include "bdl/train.hpp"

namespace bdl {

class DataError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// PNM

namespace detail {

inline std::size_t pnm_header_int(const std::string& buf, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(buf.data() + pos, buf.data() + buf.size(), v);
  if (ec != std::errc() || end == buf.data() + pos) throw DataError(path + ": malformed PNM header");
  pos = static_cast<std::size_t>(end - buf.data());
  return v;
}

}  // namespace detail

/// Decodes P6 (RGB) or P5 (gray, replicated to 3 planes) into [3,H,W] in [0,1].
inline Tensor decode_pnm(const std::string& buf, const std::string& path = "<memory>") {
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '6' && buf[1] != '5'))
    throw DataError(path + ": not a binary PPM (P6) or PGM (P5) image");
  const bool rgb = buf[1] == '6';
  std::size_t pos = 2;
  const std::size_t w = detail::pnm_header_int(buf, pos, path);
  const std::size_t h = detail::pnm_header_int(buf, pos, path);
  const std::size_t maxval = detail::pnm_header_int(buf, pos, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw DataError(path + ": invalid PNM dimensions or maxval");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw DataError(path + ": malformed PNM header");
  ++pos;
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  const std::size_t planes = rgb ? 3 : 1;
  if (buf.size() - pos < w * h * planes * bytes) throw DataError(path + ": truncated PNM pixel data");
  Tensor img({3, h, w});
  const double denom = static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < planes; ++c) {
        const std::size_t i = pos + ((y * w + x) * planes + c) * bytes;
        std::size_t v = static_cast<unsigned char>(buf[i]);
        if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(buf[i + 1]);
        if (v > maxval) throw DataError(path + ": sample exceeds maxval");
        const double val = static_cast<double>(v) / denom;
        if (rgb) {
          img.at(c, y, x) = val;
        } else {
          for (std::size_t k = 0; k < 3; ++k) img.at(k, y, x) = val;
        }
      }
    }
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 8-bit P6 encoding of a [3,H,W] image in [0,1].
inline std::string encode_ppm(const Tensor& img) {
  require(img.rank() == 3 && img.dim(0) == 3, "encode_ppm: expected [3,H,W]");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(img.at(c, y, x))));
  return out;
}

/// 8-bit P5 encoding of a [H,W] plane, min-max scaled to 0..255.
inline std::string encode_pgm_scaled(const Tensor& plane) {
  require(plane.rank() == 2, "encode_pgm_scaled: expected [H,W]");
  const auto [lo, hi] = std::minmax_element(plane.values().begin(), plane.values().end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(plane.dim(1)) + " " + std::to_string(plane.dim(0)) + "\n255\n";
  for (double v : plane.values()) out.push_back(static_cast<char>(to_byte(range > 0.0 ? (v - *lo) / range : 0.0)));
  return out;
}

inline Tensor load_image(const std::string& path) { return decode_pnm(read_file(path), path); }

// ---------------------------------------------------------------------------
// Annotations

inline std::vector<GroundTruth> parse_annotations(const std::string& text, const std::string& path,
                                                  std::size_t image_h, std::size_t image_w) {
  std::vector<GroundTruth> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    std::istringstream ls(line);
    std::string label;
    long long x, y, w, h;
    if (!(ls >> label >> x >> y >> w >> h) || label != "person")
      throw DataError(where + "expected 'person x y w h [occlusion]'");
    double occ = 0.0;
    if (!(ls >> occ)) {
      if (!ls.eof()) throw DataError(where + "malformed occlusion value");
      occ = 0.0;
    }
    std::string extra;
    if (ls >> extra) throw DataError(where + "unexpected trailing field '" + extra + "'");
    if (w <= 0 || h <= 0) throw DataError(where + "box width and height must be positive");
    if (occ < 0.0 || occ > 1.0) throw DataError(where + "occlusion must be in [0,1]");
    if (x < 0 || y < 0 || static_cast<std::size_t>(x + w) > image_w || static_cast<std::size_t>(y + h) > image_h)
      throw DataError(where + "box lies outside the " + std::to_string(image_w) + "x" + std::to_string(image_h) + " image");
    out.push_back({{static_cast<double>(x), static_cast<double>(y), static_cast<double>(w), static_cast<double>(h)}, occ});
  }
  return out;
}

inline std::string format_annotations(const std::vector<GroundTruth>& gts) {
  std::string out;
  for (const auto& g : gts) {
    out += "person " + std::to_string(std::lround(g.box.x)) + " " + std::to_string(std::lround(g.box.y)) + " " +
           std::to_string(std::lround(g.box.w)) + " " + std::to_string(std::lround(g.box.h));
    if (g.occlusion != 0.0) {
      std::ostringstream os;
      os << " " << g.occlusion;
      out += os.str();
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetEntry {
  std::string stem;
  Tensor image;  // [3,H,W]
  std::vector<GroundTruth> truths;
};

struct Dataset {
  std::vector<DatasetEntry> entries;

  std::size_t num_truths() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.truths.size();
    return n;
  }
};

/// Image paths under <dir>/images, sorted by file name.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path images = fs::path(dir) / "images";
  if (!fs::is_directory(images)) throw DataError(dir + ": missing images/ directory");
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(images)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

inline std::vector<GroundTruth> load_annotations(const std::string& dir, const std::string& stem, std::size_t h,
                                                 std::size_t w) {
  namespace fs = std::filesystem;
  const fs::path ann = fs::path(dir) / "annotations" / (stem + ".txt");
  if (!fs::exists(ann)) return {};
  return parse_annotations(read_file(ann.string()), ann.string(), h, w);
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  for (const auto& p : list_images(dir)) {
    DatasetEntry e;
    e.stem = p.stem().string();
    e.image = load_image(p.string());
    e.truths = load_annotations(dir, e.stem, e.image.dim(1), e.image.dim(2));
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "annotations");
  for (const auto& e : ds.entries) {
    write_file((fs::path(dir) / "images" / (e.stem + ".ppm")).string(), encode_ppm(e.image));
    write_file((fs::path(dir) / "annotations" / (e.stem + ".txt")).string(), format_annotations(e.truths));
  }
}

/// SHA-256 over stems, 8-bit image bytes and annotation text, in entry order.
inline std::string dataset_digest(const Dataset& ds) {
  std::string blob;
  for (const auto& e : ds.entries) {
    blob += e.stem + "\n" + encode_ppm(e.image) + format_annotations(e.truths) + "\n";
  }
  return sha256_hex(blob);
}

// ---------------------------------------------------------------------------
// Window sampling

inline constexpr double kNegativeMaxIou = 0.3;
inline constexpr int kNegativeAttempts = 200;

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t skipped = 0;  // negatives that could not be placed
};

struct WindowGeometry {
  std::size_t h = 84;
  std::size_t w = 28;
  std::size_t bins = kDefaultOrientationBins;

  static WindowGeometry of(const NetConfig& cfg) {
    require(cfg.in_channels > 4, "network input must have more than 4 channels");
    return {cfg.window_h, cfg.window_w, cfg.in_channels - 4};
  }
};

inline ChannelStack window_stack(const Tensor& image, const BBox& box, const WindowGeometry& g) {
  const auto x = static_cast<std::size_t>(box.x), y = static_cast<std::size_t>(box.y);
  const auto w = static_cast<std::size_t>(box.w), h = static_cast<std::size_t>(box.h);
  return extract_stack(resize_bilinear(crop(image, y, x, h, w), g.h, g.w), g.h, g.w, g.bins);
}

/// Per image: every truth resized to the window (target 1), then
/// `neg_per_image` random window-aspect boxes with IoU < 0.3 against all
/// truths (target 0).
inline SampleSet sample_windows(const Dataset& ds, Rng& rng, std::size_t neg_per_image, const WindowGeometry& g) {
  SampleSet out;
  for (const auto& e : ds.entries) {
    const std::size_t ih = e.image.dim(1), iw = e.image.dim(2);
    for (const auto& t : e.truths) {
      out.samples.push_back({window_stack(e.image, t.box, g), 1.0, 1.0});
      ++out.positives;
    }
    const std::size_t max_h = std::min(ih, iw * g.h / g.w);
    if (max_h < g.h) {
      out.skipped += neg_per_image;
      continue;
    }
    for (std::size_t n = 0; n < neg_per_image; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < kNegativeAttempts && !placed; ++attempt) {
        const std::size_t h = g.h + rng.below(max_h - g.h + 1);
        const std::size_t w = std::max<std::size_t>(1, std::min(iw, (h * g.w + g.h / 2) / g.h));
        const BBox box{static_cast<double>(rng.below(iw - w + 1)), static_cast<double>(rng.below(ih - h + 1)),
                       static_cast<double>(w), static_cast<double>(h)};
        const bool clear = std::all_of(e.truths.begin(), e.truths.end(),
                                       [&](const GroundTruth& t) { return iou(box, t.box) < kNegativeMaxIou; });
        if (!clear) continue;
        out.samples.push_back({window_stack(e.image, box, g), 0.0, 1.0});
        ++out.negatives;
        placed = true;
      }
      if (!placed) ++out.skipped;
    }
  }
  if (out.skipped > 0)
    std::cerr << "warning: " << out.skipped << " negative window(s) could not be placed\n";
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthConfig {
  std::size_t num_images = 100;
  std::size_t height = 168;
  std::size_t width = 56;
  std::size_t min_figures = 0;
  std::size_t max_figures = 2;
  std::vector<std::size_t> figure_heights = {56, 84};
  double contrast = 0.25;
  std::size_t clutter = 4;
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::string stem_prefix = "synth";

  void validate() const {
    require(height > 0 && width > 0, "synth: image size must be positive");
    require(min_figures <= max_figures, "synth: min_figures must be <= max_figures");
    require(!figure_heights.empty(), "synth: figure_heights must not be empty");
    for (std::size_t fh : figure_heights) {
      require(fh >= 6, "synth: figure heights must be at least 6 pixels");
      require(fh <= height && (fh + 1) / 3 <= width, "synth: figure height " + std::to_string(fh) + " does not fit the image");
    }
    require(contrast >= 0.0, "synth: contrast must be non-negative");
    require(noise >= 0.0, "synth: noise must be non-negative");
  }
};

namespace detail {

inline void add_rect(Tensor& img, long x0, long y0, long x1, long y1, const std::array<double, 3>& delta) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  for (long y = std::max(0L, y0); y < std::min(h, y1); ++y)
    for (long x = std::max(0L, x0); x < std::min(w, x1); ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) += delta[c];
}

// Vertical bar (torso and legs) under a disc (head), brightened by `contrast`.
inline void draw_figure(Tensor& img, const BBox& box, double contrast) {
  const double bar_w = box.h / 3.0 * 0.45;
  const double r = bar_w * 0.6;
  const double cx = box.x + box.w / 2.0;
  const double cy = box.y + r;
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  for (long y = static_cast<long>(box.y); y < std::min(h, static_cast<long>(box.y + box.h)); ++y) {
    for (long x = static_cast<long>(box.x); x < std::min(w, static_cast<long>(box.x + box.w)); ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool head = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
      const bool body = py >= box.y + 2.0 * r && std::abs(px - cx) <= bar_w / 2.0;
      if (head || body)
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) += contrast;
    }
  }
}

}  // namespace detail

/// Noise background with clutter rectangles and 0..2 figures per image.
/// Pixels are quantized to 8 bits so a saved and reloaded dataset is identical.
inline Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng master(cfg.seed);
  Dataset ds;
  const long H = static_cast<long>(cfg.height), W = static_cast<long>(cfg.width);
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    Rng rng = master.fork();
    Tensor img({3, cfg.height, cfg.width});
    std::array<double, 3> base{};
    for (double& b : base) b = rng.uniform(0.2, 0.5);
    for (std::size_t c = 0; c < 3; ++c)
      for (double& v : img.plane(c)) v = base[c] + cfg.noise * rng.uniform(-1.0, 1.0);

    for (std::size_t k = 0; k < cfg.clutter; ++k) {
      const long rw = 3 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, W / 2))));
      const long rh = 3 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, H / 3))));
      const long x0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(W))) - rw / 2;
      const long y0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(H))) - rh / 2;
      std::array<double, 3> d{};
      for (double& v : d) v = rng.uniform(-0.2, 0.2);
      detail::add_rect(img, x0, y0, x0 + rw, y0 + rh, d);
    }

    DatasetEntry e;
    const std::size_t figures = cfg.min_figures + rng.below(cfg.max_figures - cfg.min_figures + 1);
    for (std::size_t f = 0; f < figures; ++f) {
      const std::size_t fh = cfg.figure_heights[rng.below(cfg.figure_heights.size())];
      const std::size_t fw = (fh + 1) / 3;
      for (int attempt = 0; attempt < 50; ++attempt) {
        const BBox box{static_cast<double>(rng.below(cfg.width - fw + 1)),
                       static_cast<double>(rng.below(cfg.height - fh + 1)), static_cast<double>(fw),
                       static_cast<double>(fh)};
        const bool clear = std::all_of(e.truths.begin(), e.truths.end(),
                                       [&](const GroundTruth& t) { return iou(box, t.box) == 0.0; });
        if (!clear) continue;
        detail::draw_figure(img, box, cfg.contrast);
        e.truths.push_back({box, 0.0});
        break;
      }
    }
    for (double& v : img.values()) v = static_cast<double>(to_byte(v)) / 255.0;
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%05zu", cfg.stem_prefix.c_str(), i);
    e.stem = stem;
    e.image = std::move(img);
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

}  // namespace bdl
