#pragma once

// Run configuration: one JSON manifest with every tunable. All sections and
// keys are optional; unknown keys anywhere are rejected.
//
//   {
//     "preset": "full" | "desk",
//     "net":       { window_h, window_w, c2_maps, c2_kernel, pool, c4_bank, fc_out },
//     "channels":  { bins },
//     "train":     { eta, epochs, seed, shuffle, warmup, penalty: { alpha_r, alpha_w, mode } },
//     "sampling":  { neg_per_image, seed, heldout_fraction },
//     "detect":    { stride, scale_step, score_thresh, nms_iou },
//     "eval":      { iou, reasonable, min_height, max_occlusion },
//     "synth":     { num_images, height, width, min_figures, max_figures,
//                    figure_heights, contrast, clutter, noise, seed },
//     "stability": { train_windows, heldout_windows, neg_per_image, seeds,
//                    synth: {...}, train: {...} }
//   }

#include <concepts>
#include <set>

#include "bdl/detect.hpp"
#include "bdl/eval.hpp"
#include "bdl/experiment.hpp"
#include "bdl/model_io.hpp"
#include "bdl/train.hpp"
#include "json.hpp"

namespace bdl {

struct SamplingConfig {
  std::size_t neg_per_image = 5;
  std::uint64_t seed = 7;
  double heldout_fraction = 0.25;  // used when no separate held-out dataset is given
};

struct EvalConfig {
  double iou = 0.5;
  bool reasonable = true;
  ReasonableSubset subset;
};

struct RunConfig {
  NetConfig net = NetConfig::full();
  TrainConfig train;
  SamplingConfig sampling;
  DetectParams detect;
  EvalConfig eval;
  SynthConfig synth;
  StabilityConfig stability;

  std::size_t bins() const { return net.in_channels - 4; }

  void validate() const {
    net.validate();
    require(net.in_channels > 4, "config: need at least one orientation bin");
    train.validate();
    stability.train.validate();
    detect.validate();
    synth.validate();
    stability.synth.validate();
    require(sampling.heldout_fraction > 0.0 && sampling.heldout_fraction < 1.0,
            "config: sampling.heldout_fraction must be in (0,1)");
    require(eval.iou > 0.0 && eval.iou <= 1.0, "config: eval.iou must be in (0,1]");
    require(!stability.seeds.empty(), "config: stability.seeds must not be empty");
  }
};

namespace detail {

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), "config: '" + path_ + "' must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) > 0, "config: unknown key '" + path_ + "." + it.key() + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  template <std::unsigned_integral T>
  void get(const std::string& key, T& dst) {
    if (!has(key)) return;
    require(is_count(j_[key]), "config: '" + path(key) + "' must be a non-negative integer");
    dst = j_[key].template get<T>();
  }
  void get(const std::string& key, double& dst) {
    if (!has(key)) return;
    require(j_[key].is_number(), "config: '" + path(key) + "' must be a number");
    dst = j_[key].get<double>();
  }
  void get(const std::string& key, bool& dst) {
    if (!has(key)) return;
    require(j_[key].is_boolean(), "config: '" + path(key) + "' must be true or false");
    dst = j_[key].get<bool>();
  }
  void get(const std::string& key, std::vector<std::size_t>& dst) {
    if (!has(key)) return;
    require(j_[key].is_array(), "config: '" + path(key) + "' must be an array");
    dst.clear();
    for (const auto& e : j_[key]) {
      require(is_count(e), "config: '" + path(key) + "' entries must be non-negative integers");
      dst.push_back(e.get<std::size_t>());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline PenaltyMode parse_penalty_mode(const std::string& s) {
  if (s == "stateless") return PenaltyMode::stateless;
  if (s == "cumulative") return PenaltyMode::cumulative;
  throw Error("config: penalty mode must be 'stateless' or 'cumulative', got '" + s + "'");
}

inline void read_synth(Section& s, SynthConfig& c) {
  s.get("num_images", c.num_images);
  s.get("height", c.height);
  s.get("width", c.width);
  s.get("min_figures", c.min_figures);
  s.get("max_figures", c.max_figures);
  s.get("figure_heights", c.figure_heights);
  s.get("contrast", c.contrast);
  s.get("clutter", c.clutter);
  s.get("noise", c.noise);
  s.get("seed", c.seed);
}

inline void read_train(Section& s, TrainConfig& t) {
  s.get("eta", t.eta);
  s.get("epochs", t.epochs);
  s.get("seed", t.seed);
  s.get("shuffle", t.shuffle);
  s.get("warmup", t.warmup);
  if (s.has("penalty")) {
    Section p(s.raw("penalty"), s.path("penalty"));
    p.get("alpha_r", t.penalty.alpha_r);
    p.get("alpha_w", t.penalty.alpha_w);
    if (p.has("mode")) {
      const auto& m = p.raw("mode");
      require(m.is_string(), "config: '" + p.path("mode") + "' must be a string");
      t.penalty.mode = parse_penalty_mode(m.get<std::string>());
    }
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig rc;
  detail::Section top(j, "config");
  if (top.has("preset")) {
    const auto& p = top.raw("preset");
    require(p.is_string(), "config: 'preset' must be a string");
    if (p == "full") {
      rc.net = NetConfig::full();
    } else if (p == "desk") {
      rc.net = NetConfig::desk();
    } else {
      throw Error("config: unknown preset " + p.dump() + " (expected \"full\" or \"desk\")");
    }
  }
  if (top.has("net")) {
    const NetConfig base = rc.net;
    require(!top.raw("net").contains("in_channels"), "config: set channels.bins instead of net.in_channels");
    rc.net = config_from_json(top.raw("net"), &base);
  }
  if (top.has("channels")) {
    detail::Section s(top.raw("channels"), "channels");
    std::size_t bins = rc.bins();
    s.get("bins", bins);
    require(bins >= 1, "config: channels.bins must be >= 1");
    rc.net.in_channels = 4 + bins;
  }
  if (top.has("train")) {
    detail::Section s(top.raw("train"), "train");
    detail::read_train(s, rc.train);
  }
  if (top.has("sampling")) {
    detail::Section s(top.raw("sampling"), "sampling");
    s.get("neg_per_image", rc.sampling.neg_per_image);
    s.get("seed", rc.sampling.seed);
    s.get("heldout_fraction", rc.sampling.heldout_fraction);
  }
  if (top.has("detect")) {
    detail::Section s(top.raw("detect"), "detect");
    s.get("stride", rc.detect.stride);
    s.get("scale_step", rc.detect.scale_step);
    s.get("score_thresh", rc.detect.score_thresh);
    s.get("nms_iou", rc.detect.nms_iou);
  }
  if (top.has("eval")) {
    detail::Section s(top.raw("eval"), "eval");
    s.get("iou", rc.eval.iou);
    s.get("reasonable", rc.eval.reasonable);
    s.get("min_height", rc.eval.subset.min_height);
    s.get("max_occlusion", rc.eval.subset.max_occlusion);
  }
  if (top.has("synth")) {
    detail::Section s(top.raw("synth"), "synth");
    detail::read_synth(s, rc.synth);
  }
  if (top.has("stability")) {
    detail::Section s(top.raw("stability"), "stability");
    s.get("train_windows", rc.stability.train_windows);
    s.get("heldout_windows", rc.stability.heldout_windows);
    s.get("neg_per_image", rc.stability.neg_per_image);
    if (s.has("seeds")) {
      const auto& seeds = s.raw("seeds");
      require(seeds.is_array(), "config: 'stability.seeds' must be an array");
      rc.stability.seeds.clear();
      for (const auto& e : seeds) {
        require(is_count(e), "config: 'stability.seeds' entries must be non-negative integers");
        rc.stability.seeds.push_back(e.get<std::uint64_t>());
      }
    }
    if (s.has("synth")) {
      detail::Section ss(s.raw("synth"), "stability.synth");
      detail::read_synth(ss, rc.stability.synth);
    }
    if (s.has("train")) {
      detail::Section st(s.raw("train"), "stability.train");
      detail::read_train(st, rc.stability.train);
    }
  }
  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace bdl
