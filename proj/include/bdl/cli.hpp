#pragma once

// Command-line front end. `run` takes the argument list (without the program
// name) and writes to the given streams, so tests can drive it in-process.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "bdl/config.hpp"

namespace bdl::cli {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string sci6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Detection files: one "stem x y w h score" line per detection.

struct StemDetection {
  std::string stem;
  Detection det;
};

inline std::string format_detections(const std::vector<StemDetection>& dets) {
  std::string out;
  for (const auto& d : dets) {
    out += d.stem + " " + fixed6(d.det.box.x) + " " + fixed6(d.det.box.y) + " " + fixed6(d.det.box.w) + " " +
           fixed6(d.det.box.h) + " " + fixed6(d.det.score) + "\n";
  }
  return out;
}

inline std::vector<StemDetection> parse_detections(const std::string& text, const std::string& path) {
  std::vector<StemDetection> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    StemDetection d;
    std::string extra;
    if (!(ls >> d.stem >> d.det.box.x >> d.det.box.y >> d.det.box.w >> d.det.box.h >> d.det.score) || (ls >> extra))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'stem x y w h score'");
    if (!(d.det.box.w > 0.0 && d.det.box.h > 0.0))
      throw DataError(path + ":" + std::to_string(lineno) + ": box width and height must be positive");
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies.

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_synth(const RunConfig& rc, const std::string& out_dir, Streams io) {
  const Dataset ds = synth_generate(rc.synth);
  save_dataset(ds, out_dir);
  io.out << "images=" << ds.entries.size() << " truths=" << ds.num_truths() << " digest=" << dataset_digest(ds)
         << "\n";
  return 0;
}

inline int cmd_extract(const RunConfig& rc, const std::string& image_path, const std::string& out_dir, Streams io) {
  const Tensor image = load_image(image_path);
  const std::size_t wh = rc.net.window_h, ww = rc.net.window_w, h = image.dim(1), w = image.dim(2);
  require(h >= wh && w >= ww, image_path + ": image is smaller than the " + std::to_string(wh) + "x" +
                                  std::to_string(ww) + " window");
  std::filesystem::create_directories(out_dir);
  const std::string stem = std::filesystem::path(image_path).stem().string();
  std::size_t n = 0;
  for (std::size_t y = 0; y + wh <= h; y += rc.detect.stride) {
    for (std::size_t x = 0; x + ww <= w; x += rc.detect.stride) {
      char name[64];
      std::snprintf(name, sizeof name, "_y%04zu_x%04zu.bdlt", y, x);
      const ChannelStack s = extract_stack(crop(image, y, x, wh, ww), wh, ww, rc.bins());
      save_bdlt((std::filesystem::path(out_dir) / (stem + name)).string(), s.channels);
      ++n;
    }
  }
  io.out << "windows=" << n << " channels=" << rc.net.in_channels << " size=" << wh << "x" << ww << "\n";
  return 0;
}

/// Held-out images are a seeded fraction of the training directory unless a
/// separate directory is given.
inline WindowSets training_windows(const RunConfig& rc, const std::string& data_dir,
                                   const std::optional<std::string>& heldout_dir) {
  const WindowGeometry g = WindowGeometry::of(rc.net);
  Rng rng(rc.sampling.seed);
  Dataset train_ds = load_dataset(data_dir);
  require(!train_ds.entries.empty(), data_dir + ": no images");
  Dataset held_ds;
  if (heldout_dir) {
    held_ds = load_dataset(*heldout_dir);
    require(!held_ds.entries.empty(), *heldout_dir + ": no images");
  } else {
    const std::size_t n = train_ds.entries.size();
    require(n >= 2, data_dir + ": need at least two images to split off a held-out set");
    auto held_n = static_cast<std::size_t>(std::ceil(rc.sampling.heldout_fraction * static_cast<double>(n)));
    held_n = std::clamp<std::size_t>(held_n, 1, n - 1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng split = rng.fork();
    split.shuffle(idx);
    std::vector<bool> is_held(n, false);
    for (std::size_t i = 0; i < held_n; ++i) is_held[idx[i]] = true;
    Dataset rest;
    for (std::size_t i = 0; i < n; ++i)
      (is_held[i] ? held_ds : rest).entries.push_back(std::move(train_ds.entries[i]));
    train_ds = std::move(rest);
  }
  WindowSets sets;
  sets.train = sample_windows(train_ds, rng, rc.sampling.neg_per_image, g).samples;
  sets.heldout = sample_windows(held_ds, rng, rc.sampling.neg_per_image, g).samples;
  return sets;
}

inline int cmd_train(const RunConfig& rc, const std::string& data_dir, const std::optional<std::string>& heldout_dir,
                     const std::string& model_path, const std::optional<std::string>& report_path, Streams io) {
  const WindowSets sets = training_windows(rc, data_dir, heldout_dir);
  Rng rng(rc.train.seed);
  Network net = init(rc.net, rng);
  std::string csv = "epoch,train_mse,heldout_error\n";
  const TrainReport rep =
      train(net, sets.train, sets.heldout, rc.train, [&](std::size_t epoch, const Network&, const TrainReport& r) {
        csv += std::to_string(epoch) + "," + fixed6(r.train_mse.back()) + "," + fixed6(r.heldout_error.back()) + "\n";
      });
  save(net, model_path);
  if (report_path) write_file(*report_path, csv);
  io.out << "train_windows=" << sets.train.size() << " heldout_windows=" << sets.heldout.size() << "\n";
  io.out << "final_heldout_error=" << fixed6(rep.final_error()) << "\n";
  io.out << "stability=" << fixed6(rep.stability) << "\n";
  io.out << "digest=" << digest(net) << "\n";
  return 0;
}

inline int cmd_gradcheck(const RunConfig& rc, std::size_t seeds, const GradCheckOptions& opts, double tol,
                         Streams io) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    Rng rng(seed);
    const GradCheckReport r = gradient_check(rc.net, rng, opts);
    io.out << "seed=" << seed << " checked=" << r.checked << " max_rel_error=" << sci6(r.max_rel_error)
           << " worst=" << r.worst_param << "\n";
    worst = std::max(worst, r.max_rel_error);
  }
  io.out << "max_rel_error=" << sci6(worst) << "\n";
  if (worst > tol) {
    io.err << "gradcheck: max relative error " << sci6(worst) << " exceeds tolerance " << sci6(tol) << "\n";
    return 1;
  }
  return 0;
}

inline int cmd_detect(const RunConfig& rc, const std::string& model_path, const std::optional<std::string>& data_dir,
                      const std::optional<std::string>& image_path, const std::string& out_path, Streams io) {
  const Network net = load(model_path);
  std::vector<std::filesystem::path> images;
  if (data_dir) images = list_images(*data_dir);
  if (image_path) images.emplace_back(*image_path);
  std::vector<StemDetection> all;
  for (const auto& p : images) {
    const std::string stem = p.stem().string();
    for (const auto& d : detect(load_image(p.string()), net, rc.detect)) all.push_back({stem, d});
  }
  write_file(out_path, format_detections(all));
  io.out << "images=" << images.size() << " detections=" << all.size() << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& rc, const std::string& det_path, const std::string& data_dir,
                    const std::optional<std::string>& curve_path, Streams io) {
  const Dataset ds = load_dataset(data_dir);
  require(!ds.entries.empty(), data_dir + ": no images");
  std::map<std::string, std::vector<Detection>> by_stem;
  for (const auto& e : ds.entries) by_stem[e.stem];
  for (auto& d : parse_detections(read_file(det_path), det_path)) {
    auto it = by_stem.find(d.stem);
    if (it == by_stem.end()) throw DataError(det_path + ": detection for unknown image '" + d.stem + "'");
    it->second.push_back(d.det);
  }
  std::vector<ImageMatch> per_image;
  std::size_t num_gt = 0;
  for (const auto& e : ds.entries) {
    const auto gts = rc.eval.reasonable ? reasonable_filter(e.truths, rc.eval.subset) : e.truths;
    num_gt += gts.size();
    per_image.push_back(match(by_stem[e.stem], gts, rc.eval.iou));
  }
  const EvalCurve c = curve(per_image, ds.entries.size(), num_gt);
  if (curve_path) {
    std::string csv = "threshold,fppi,miss_rate\n";
    for (const auto& p : c.points) csv += fixed6(p.threshold) + "," + fixed6(p.fppi) + "," + fixed6(p.miss_rate) + "\n";
    write_file(*curve_path, csv);
  }
  io.out << "images=" << ds.entries.size() << " ground_truth=" << num_gt << "\n";
  for (const auto& [f, mr] : c.reference) io.out << "fppi=" << fixed6(f) << " miss_rate=" << fixed6(mr) << "\n";
  io.out << "LAMR=" << fixed6(c.lamr) << "\n";
  return 0;
}

inline int cmd_dump_kernels(const std::string& model_path, const std::string& out_dir, Streams io) {
  const Network net = load(model_path);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::size_t n = 0;
  auto dump = [&](const Tensor& w, const std::string& prefix) {
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      const Tensor filt = w.slice(o);
      for (std::size_t c = 0; c < filt.dim(0); ++c) {
        char name[96];
        std::snprintf(name, sizeof name, "%s_k%03zu_c%03zu.pgm", prefix.c_str(), o, c);
        write_file((fs::path(out_dir) / name).string(), encode_pgm_scaled(filt.slice(c)));
        ++n;
      }
    }
  };
  dump(net.params.c2_weight, "c2");
  for (std::size_t e = 0; e < net.params.c4_weight.size(); ++e) dump(net.params.c4_weight[e], "c4_" + std::to_string(e));
  io.out << "kernels=" << n << "\n";
  return 0;
}

inline int cmd_stability(const RunConfig& rc, const std::optional<std::string>& csv_path, Streams io) {
  const WindowSets sets = make_window_sets(rc.stability, WindowGeometry::of(rc.net));
  std::string csv = "seed,variant,stability_score,final_error\n";
  const StabilitySummary s = run_stability(rc.net, rc.stability.train, sets, rc.stability.seeds, [&](const StabilityRun& r) {
    const std::string row = std::to_string(r.seed) + "," + r.variant + "," + fixed6(r.report.stability) + "," +
                            fixed6(r.report.final_error());
    csv += row + "\n";
    io.out << row << "\n" << std::flush;
  });
  if (csv_path) write_file(*csv_path, csv);
  io.out << "median_stability bdl=" << fixed6(s.bdl_median_stability)
         << " baseline=" << fixed6(s.baseline_median_stability) << "\n";
  io.out << "median_final_error bdl=" << fixed6(s.bdl_median_final) << " baseline=" << fixed6(s.baseline_median_final)
         << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing.

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> preset;
  std::optional<double> eta, alpha_r, alpha_w, score_thresh, scale_step, nms_iou;
  std::optional<std::size_t> epochs, warmup, stride, num_images;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  bool baseline = false;

  void apply_train(TrainConfig& t) const {
    if (eta) t.eta = *eta;
    if (epochs) t.epochs = *epochs;
    if (warmup) t.warmup = *warmup;
    if (alpha_r) t.penalty.alpha_r = *alpha_r;
    if (alpha_w) t.penalty.alpha_w = *alpha_w;
    if (mode) t.penalty.mode = detail::parse_penalty_mode(*mode);
    t.baseline = baseline;
  }

  RunConfig resolve() const {
    RunConfig rc = config ? load_run_config(*config) : RunConfig{};
    if (preset) {
      const std::size_t channels = rc.net.in_channels;
      if (*preset == "full") {
        rc.net = NetConfig::full();
      } else if (*preset == "desk") {
        rc.net = NetConfig::desk();
      } else {
        throw Error("unknown preset '" + *preset + "' (expected full or desk)");
      }
      rc.net.in_channels = channels;
    }
    apply_train(rc.train);
    if (stride) rc.detect.stride = *stride;
    if (scale_step) rc.detect.scale_step = *scale_step;
    if (score_thresh) rc.detect.score_thresh = *score_thresh;
    if (nms_iou) rc.detect.nms_iou = *nms_iou;
    if (num_images) rc.synth.num_images = *num_images;
    if (seed) {
      rc.train.seed = *seed;
      rc.synth.seed = *seed;
    }
    apply_train(rc.stability.train);
    rc.validate();
    return rc;
  }
};

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional pedestrian detector with boosting-like error penalties"};
  app.require_subcommand(1);
  Overrides ov;
  auto add_config = [&](CLI::App* sc) {
    sc->add_option("--config", ov.config, "JSON run configuration")->check(CLI::ExistingFile);
  };
  auto add_preset = [&](CLI::App* sc) {
    sc->add_option("--preset", ov.preset, "network size: full or desk")->check(CLI::IsMember({"full", "desk"}));
  };
  auto add_train_flags = [&](CLI::App* sc) {
    add_preset(sc);
    sc->add_option("--eta", ov.eta, "learning rate");
    sc->add_option("--epochs", ov.epochs, "training epochs");
    sc->add_option("--warmup", ov.warmup, "first epoch counted by the stability score");
    sc->add_option("--seed", ov.seed, "initialisation and shuffling seed");
    sc->add_option("--alpha-r", ov.alpha_r, "penalty factor for correctly classified samples");
    sc->add_option("--alpha-w", ov.alpha_w, "penalty factor for misclassified samples");
    sc->add_option("--mode", ov.mode, "penalty mode")->check(CLI::IsMember({"stateless", "cumulative"}));
  };
  auto add_detect_flags = [&](CLI::App* sc) {
    sc->add_option("--stride", ov.stride, "window stride in pixels");
    sc->add_option("--scale-step", ov.scale_step, "pyramid scale factor");
    sc->add_option("--score-thresh", ov.score_thresh, "minimum score kept");
    sc->add_option("--nms-iou", ov.nms_iou, "suppression overlap");
  };

  std::string out_path, model_path, data_dir, image_path, det_path;
  std::optional<std::string> heldout_dir, report_path, curve_path, data_opt, image_opt;

  auto* synth = app.add_subcommand("synth", "render a synthetic pedestrian dataset");
  add_config(synth);
  synth->add_option("--out", out_path, "output dataset directory")->required();
  synth->add_option("--num-images", ov.num_images, "number of images");
  synth->add_option("--seed", ov.seed, "generator seed");

  auto* extract = app.add_subcommand("extract-channels", "write normalised channel stacks of every window");
  add_config(extract);
  add_preset(extract);
  extract->add_option("--image", image_path, "input PPM/PGM image")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", out_path, "output directory")->required();
  extract->add_option("--stride", ov.stride, "window stride in pixels");

  auto* trn = app.add_subcommand("train", "train a network on an annotated dataset");
  add_config(trn);
  add_train_flags(trn);
  trn->add_option("--data", data_dir, "training dataset directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--heldout", heldout_dir, "held-out dataset directory")->check(CLI::ExistingDirectory);
  trn->add_option("--model", model_path, "output model file")->required();
  trn->add_option("--report", report_path, "per-epoch CSV report");
  trn->add_flag("--baseline", ov.baseline, "plain backpropagation, no penalty");

  std::size_t gc_seeds = 5;
  double gc_tol = 1e-4;
  GradCheckOptions gc_opts;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  add_config(gc);
  add_preset(gc);
  gc->add_option("--seeds", gc_seeds, "number of random networks (seeds 1..N)");
  gc->add_option("--samples", gc_opts.sampled, "sampled convolution parameters per network");
  gc->add_option("--step", gc_opts.step, "central difference step");
  gc->add_option("--tol", gc_tol, "maximum allowed relative error");
  gc->add_option("--alpha-r", ov.alpha_r, "penalty factor for correct samples");
  gc->add_option("--alpha-w", ov.alpha_w, "penalty factor for wrong samples");

  auto* det = app.add_subcommand("detect", "run the detector over images");
  add_config(det);
  add_detect_flags(det);
  det->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  auto* det_data = det->add_option("--data", data_opt, "dataset directory")->check(CLI::ExistingDirectory);
  auto* det_image = det->add_option("--image", image_opt, "single image")->check(CLI::ExistingFile);
  det_data->excludes(det_image);
  det->add_option("--out", out_path, "output detections file")->required();

  bool eval_all = false;
  auto* ev = app.add_subcommand("eval", "miss rate vs. FPPI and log-average miss rate");
  add_config(ev);
  ev->add_option("--detections", det_path, "detections file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "annotated dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--curve", curve_path, "output curve CSV");
  ev->add_flag("--all", eval_all, "score every annotation, not only the reasonable subset");

  auto* dk = app.add_subcommand("dump-kernels", "write every learned kernel slice as a PGM image");
  dk->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  dk->add_option("--out", out_path, "output directory")->required();

  std::optional<std::size_t> stab_seeds;
  auto* st = app.add_subcommand("stability", "paired penalty vs. baseline runs on synthetic windows");
  add_config(st);
  add_train_flags(st);
  st->add_option("--seeds", stab_seeds, "number of seeds (1..N)");
  st->add_option("--out", report_path, "output CSV");

  std::vector<std::string> argv_store{"bdl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const Streams io{out, err};
  try {
    if (*synth) return cmd_synth(ov.resolve(), out_path, io);
    if (*extract) return cmd_extract(ov.resolve(), image_path, out_path, io);
    if (*trn) return cmd_train(ov.resolve(), data_dir, heldout_dir, model_path, report_path, io);
    if (*gc) {
      RunConfig rc = ov.resolve();
      gc_opts.penalty = {rc.train.penalty.alpha_r, rc.train.penalty.alpha_w, PenaltyMode::stateless};
      if (!ov.alpha_r && !ov.alpha_w) gc_opts.penalty = PenaltyConfig::neutral();
      require(gc_opts.step > 0.0, "gradcheck: --step must be positive");
      return cmd_gradcheck(rc, gc_seeds, gc_opts, gc_tol, io);
    }
    if (*det) {
      require(data_opt || image_opt, "detect: give --data or --image");
      return cmd_detect(ov.resolve(), model_path, data_opt, image_opt, out_path, io);
    }
    if (*ev) {
      RunConfig rc = ov.resolve();
      if (eval_all) rc.eval.reasonable = false;
      return cmd_eval(rc, det_path, data_dir, curve_path, io);
    }
    if (*dk) return cmd_dump_kernels(model_path, out_path, io);
    if (*st) {
      RunConfig rc = ov.resolve();
      if (stab_seeds) {
        require(*stab_seeds >= 1, "stability: --seeds must be >= 1");
        rc.stability.seeds.clear();
        for (std::uint64_t s = 1; s <= *stab_seeds; ++s) rc.stability.seeds.push_back(s);
      }
      return cmd_stability(rc, report_path, io);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bdl::cli
