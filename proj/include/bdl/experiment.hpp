#pragma once

// Paired stability runs: for each seed, the same initial network and sample
// order are trained once with the boosting-like penalty and once with plain
// backprop, and the spread of held-out error after warmup is compared.

#include <algorithm>

#include "bdl/data.hpp"
#include "bdl/train.hpp"

namespace bdl {

struct WindowSets {
  std::vector<Sample> train;
  std::vector<Sample> heldout;
};

// Faint, noisy figures and one negative per image: hard enough that held-out
// error keeps moving after warmup, with balanced classes.
inline SynthConfig stability_synth() {
  SynthConfig s;
  s.contrast = 0.07;
  s.noise = 0.2;
  s.seed = 100;
  return s;
}

/// Training settings the stability experiment is run with.
inline TrainConfig stability_train() {
  TrainConfig t;
  t.eta = 0.3;
  t.epochs = 40;
  t.warmup = 10;
  t.penalty = {0.8, 1.2, PenaltyMode::stateless};
  return t;
}

struct StabilityConfig {
  SynthConfig synth = stability_synth();
  std::size_t train_windows = 400;
  std::size_t heldout_windows = 200;
  std::size_t neg_per_image = 1;
  TrainConfig train = stability_train();
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7};
};

namespace detail {

inline std::vector<Sample> synth_windows(SynthConfig synth, std::size_t want, std::size_t neg_per_image,
                                         const WindowGeometry& g) {
  Rng rng(synth.seed ^ 0x5bd1e995ull);
  std::vector<Sample> out;
  // Each image yields about (figures + negatives) windows; grow until enough.
  synth.num_images = std::max<std::size_t>(1, want / (neg_per_image + 1) + 1);
  for (;;) {
    const Dataset ds = synth_generate(synth);
    SampleSet set = sample_windows(ds, rng, neg_per_image, g);
    out = std::move(set.samples);
    if (out.size() >= want) break;
    synth.num_images *= 2;
  }
  Rng order(synth.seed);
  order.shuffle(out);
  out.resize(want);
  return out;
}

}  // namespace detail

/// Training and held-out windows from disjoint synthetic image sets
/// (synth seeds s and s + 1).
inline WindowSets make_window_sets(const StabilityConfig& cfg, const WindowGeometry& g) {
  SynthConfig held = cfg.synth;
  held.seed = cfg.synth.seed + 1;
  return {detail::synth_windows(cfg.synth, cfg.train_windows, cfg.neg_per_image, g),
          detail::synth_windows(held, cfg.heldout_windows, cfg.neg_per_image, g)};
}

struct StabilityRun {
  std::uint64_t seed = 0;
  std::string variant;  // "bdl" or "baseline"
  TrainReport report;
};

struct StabilitySummary {
  std::vector<StabilityRun> runs;
  double bdl_median_stability = 0.0;
  double baseline_median_stability = 0.0;
  double bdl_median_final = 0.0;
  double baseline_median_final = 0.0;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using RunCallback = std::function<void(const StabilityRun&)>;

/// `train_cfg` supplies eta, epochs, warmup and the BDL penalty; its seed is
/// replaced by each experiment seed, which drives both init and sample order.
inline StabilitySummary run_stability(const NetConfig& net_cfg, const TrainConfig& train_cfg, const WindowSets& sets,
                                      const std::vector<std::uint64_t>& seeds, const RunCallback& on_run = {}) {
  require(!seeds.empty(), "stability: need at least one seed");
  StabilitySummary s;
  std::vector<double> bdl_stab, base_stab, bdl_final, base_final;
  for (std::uint64_t seed : seeds) {
    for (const bool baseline : {false, true}) {
      Rng rng(seed);
      Network net = init(net_cfg, rng);
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      tc.baseline = baseline;
      StabilityRun run{seed, baseline ? "baseline" : "bdl", train(net, sets.train, sets.heldout, tc)};
      (baseline ? base_stab : bdl_stab).push_back(run.report.stability);
      (baseline ? base_final : bdl_final).push_back(run.report.final_error());
      if (on_run) on_run(run);
      s.runs.push_back(std::move(run));
    }
  }
  s.bdl_median_stability = median(bdl_stab);
  s.baseline_median_stability = median(base_stab);
  s.bdl_median_final = median(bdl_final);
  s.baseline_median_final = median(base_final);
  return s;
}

}  // namespace bdl
