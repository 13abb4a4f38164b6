#pragma once

// Online backpropagation with boosting-like output reweighting.
//
// For a sample with target t and output y = S(u) the output sensitivity is
//   delta = S'(u) * (y - t) * alpha,   alpha = alpha_r if |y - t| < 0.5 else alpha_w
// i.e. the gradient of alpha * 0.5 * (t - y)^2 with alpha held fixed. All
// hidden-layer gradients follow by the chain rule and every parameter takes
// the delta-rule step w <- w - eta * dE/dw after each sample.

#include <cmath>
#include <functional>
#include <set>

#include "bdl/model_io.hpp"
#include "bdl/net.hpp"
#include "bdl/reference.hpp"

namespace bdl {

inline constexpr double kPenaltyThreshold = 0.5;
inline constexpr double kMinSampleWeight = 0.1;
inline constexpr double kMaxSampleWeight = 10.0;
inline constexpr double kDivergenceMse = 1e6;

enum class PenaltyMode { stateless, cumulative };

struct PenaltyConfig {
  double alpha_r = 0.8;
  double alpha_w = 1.2;
  PenaltyMode mode = PenaltyMode::stateless;

  void validate() const {
    require(alpha_r > 0.0 && alpha_w > 0.0, "penalty: alpha_r and alpha_w must be positive");
    require(alpha_w >= alpha_r, "penalty: alpha_w must be >= alpha_r");
  }

  static PenaltyConfig neutral() { return {1.0, 1.0, PenaltyMode::stateless}; }
};

struct TrainConfig {
  double eta = 0.05;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  PenaltyConfig penalty;
  bool shuffle = true;
  /// First epoch (1-based) included in the stability score.
  std::size_t warmup = 10;
  /// Plain backprop: delta = S'(u) (y - t), no penalty selection at all.
  bool baseline = false;

  void validate() const {
    require(eta > 0.0 && std::isfinite(eta), "train: eta must be positive");
    require(epochs >= 1, "train: epochs must be >= 1");
    penalty.validate();
  }
};

struct Sample {
  ChannelStack stack;
  double target = 0.0;
  double weight = 1.0;  // cumulative mode only
};

struct TrainReport {
  std::vector<double> train_mse;      // mean (y - t)^2 over each epoch's presentations
  std::vector<double> heldout_error;  // misclassification rate at 0.5 after each epoch
  double stability = 0.0;             // population std of heldout_error over [warmup, end]

  double final_error() const { return heldout_error.empty() ? 1.0 : heldout_error.back(); }
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline double loss(double output, double target) {
  const double e = target - output;
  return 0.5 * e * e;
}

struct OutputDelta {
  double delta = 0.0;
  double alpha = 1.0;
  bool correct = true;
};

inline OutputDelta output_delta(double output, double pre_act, double target, const PenaltyConfig& penalty) {
  (void)pre_act;  // S'(u) is taken from the output: S(u) (1 - S(u))
  const double err = output - target;
  const bool correct = std::abs(err) < kPenaltyThreshold;
  const double alpha = correct ? penalty.alpha_r : penalty.alpha_w;
  return {output * (1.0 - output) * err * alpha, alpha, correct};
}

inline double plain_output_delta(double output, double target) {
  return output * (1.0 - output) * (output - target);
}

/// Multiplies the persistent weight by the selected alpha, clamped.
inline void update_sample_weight(Sample& s, const OutputDelta& d) {
  s.weight = std::clamp(s.weight * d.alpha, kMinSampleWeight, kMaxSampleWeight);
}

/// Rescales weights to mean 1 while keeping them inside [0.1, 10]: finds the
/// scale c with mean(clamp(c w)) = 1 by bisection (the map is monotone in c).
inline void renormalize_weights(std::vector<Sample>& samples) {
  if (samples.empty()) return;
  const double n = static_cast<double>(samples.size());
  auto mean_at = [&](double c) {
    double m = 0.0;
    for (const auto& s : samples) m += std::clamp(c * s.weight, kMinSampleWeight, kMaxSampleWeight);
    return m / n;
  };
  double lo = 0.0, hi = 1.0;
  while (mean_at(hi) < 1.0 && hi < 1e12) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < 1.0 ? lo : hi) = mid;
  }
  for (auto& s : samples) s.weight = std::clamp(hi * s.weight, kMinSampleWeight, kMaxSampleWeight);
}

namespace detail {

inline void sigmoid_backward(Tensor& grad, const Tensor& activation) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double a = activation[i];
    grad[i] *= a * (1.0 - a);
  }
}

inline void check_trace(const Network& net, const ForwardTrace& t) {
  const auto& cfg = net.config;
  require(t.c2_out.shape() == Tensor::Shape{cfg.c2_maps, cfg.window_h, cfg.window_w} &&
              t.s3_out.shape() == Tensor::Shape{cfg.c2_maps, cfg.pooled_h(), cfg.pooled_w()} &&
              t.c4_out.size() == cfg.c4_bank.size() && t.fc_in.size() == cfg.fc_in(),
          "backward: trace does not match the network configuration");
}

}  // namespace detail

/// Gradients of the loss whose output sensitivity is `delta_out`.
inline Gradients backward(const Network& net, const ForwardTrace& t, double delta_out) {
  detail::check_trace(net, t);
  const auto& cfg = net.config;
  const auto& p = net.params;
  Gradients g = ParamSet::zeros(cfg);

  // FC: dE/dw = x * delta, dE/db = delta.
  g.fc_bias[0] = delta_out;
  Tensor d_fc_in({cfg.fc_in()});
  for (std::size_t i = 0; i < cfg.fc_in(); ++i) {
    g.fc_weight[i] = t.fc_in[i] * delta_out;
    d_fc_in[i] = p.fc_weight[i] * delta_out;
  }

  // C4: split the FC input gradient back into bank entries.
  Tensor d_s3({cfg.c2_maps, cfg.pooled_h(), cfg.pooled_w()});
  std::size_t off = 0;
  for (std::size_t e = 0; e < cfg.c4_bank.size(); ++e) {
    const auto& f = cfg.c4_bank[e];
    Tensor du(t.c4_out[e].shape());
    std::copy_n(d_fc_in.data() + off, du.size(), du.data());
    off += du.size();
    detail::sigmoid_backward(du, t.c4_out[e]);
    g.c4_weight[e] = conv2d_weight_grad(t.s3_out, du, f.kh, f.kw, Padding::valid);
    for (std::size_t n = 0; n < f.count; ++n) g.c4_bias[e][n] = sum(du.plane(n));
    const Tensor di = conv2d_input_grad(du, p.c4_weight[e], cfg.pooled_h(), cfg.pooled_w(), Padding::valid);
    for (std::size_t i = 0; i < d_s3.size(); ++i) d_s3[i] += di[i];
  }

  // S3: u = beta * blocksum + b.
  detail::sigmoid_backward(d_s3, t.s3_out);
  Tensor d_sum(d_s3.shape());
  for (std::size_t k = 0; k < cfg.c2_maps; ++k) {
    auto du = d_s3.plane(k);
    auto sums = t.s3_sum.plane(k);
    double gb = 0.0, gbeta = 0.0;
    for (std::size_t i = 0; i < du.size(); ++i) {
      gb += du[i];
      gbeta += du[i] * sums[i];
    }
    g.s3_bias[k] = gb;
    g.s3_beta[k] = gbeta;
    auto ds = d_sum.plane(k);
    for (std::size_t i = 0; i < du.size(); ++i) ds[i] = p.s3_beta[k] * du[i];
  }

  // C2: the input gradient is not needed.
  Tensor d_c2 = blocksum_adjoint(d_sum, cfg.pool);
  detail::sigmoid_backward(d_c2, t.c2_out);
  g.c2_weight = conv2d_weight_grad(t.input, d_c2, cfg.c2_kernel, cfg.c2_kernel, Padding::same);
  for (std::size_t k = 0; k < cfg.c2_maps; ++k) g.c2_bias[k] = sum(d_c2.plane(k));
  return g;
}

/// w <- w - eta * g for every parameter.
inline void sgd_step(Network& net, const Gradients& grads, double eta) {
  std::vector<const Tensor*> gs;
  grads.for_each([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
  std::size_t i = 0;
  net.params.for_each([&](const std::string& name, Tensor& w) {
    const Tensor& g = *gs[i++];
    require(g.shape() == w.shape(), "sgd_step: gradient shape mismatch for " + name);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * g[j];
  });
}

/// Fraction of samples whose score falls on the wrong side of 0.5.
inline double classification_error(const Network& net, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t wrong = 0;
  for (const auto& s : samples) {
    const bool positive = score(net, s.stack) >= 0.5;
    if (positive != (s.target == 1.0)) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(samples.size());
}

inline double stability_score(const std::vector<double>& errors, std::size_t warmup) {
  const std::size_t first = std::min(std::max<std::size_t>(warmup, 1), errors.size()) - 1;
  if (errors.empty()) return 0.0;
  const std::size_t n = errors.size() - first;
  double mean = 0.0;
  for (std::size_t i = first; i < errors.size(); ++i) mean += errors[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = first; i < errors.size(); ++i) ss += (errors[i] - mean) * (errors[i] - mean);
  return std::sqrt(ss / static_cast<double>(n));
}

using EpochCallback = std::function<void(std::size_t epoch, const Network&, const TrainReport&)>;

/// One forward/backward/update per sample per epoch, in a seeded order.
inline TrainReport train(Network& net, std::vector<Sample> train_set, const std::vector<Sample>& heldout,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  require(!train_set.empty(), "train: training set is empty");
  require(!heldout.empty(), "train: held-out set is empty");
  for (const auto& s : train_set) {
    check_stack(net.config, s.stack);
    require(s.target == 0.0 || s.target == 1.0, "train: targets must be exactly 0 or 1");
  }
  for (const auto& s : heldout) check_stack(net.config, s.stack);

  const bool cumulative = !cfg.baseline && cfg.penalty.mode == PenaltyMode::cumulative;
  for (auto& s : train_set) s.weight = 1.0;

  Rng order_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) order_rng.shuffle(order);
    double se = 0.0;
    for (std::size_t idx : order) {
      Sample& s = train_set[idx];
      const ForwardTrace t = forward(net, s.stack);
      se += (t.score - s.target) * (t.score - s.target);
      double delta;
      if (cfg.baseline) {
        delta = plain_output_delta(t.score, s.target);
      } else {
        const OutputDelta d = output_delta(t.score, t.out_pre, s.target, cfg.penalty);
        delta = d.delta;
        if (cumulative) {
          delta *= s.weight;
          update_sample_weight(s, d);
        }
      }
      sgd_step(net, backward(net, t, delta), cfg.eta);
    }
    const double mse = se / static_cast<double>(train_set.size());
    if (!std::isfinite(mse) || mse > kDivergenceMse)
      throw DivergenceError("train: diverged at epoch " + std::to_string(epoch) + " (mse " +
                            std::to_string(mse) + "); lower eta");
    if (cumulative) renormalize_weights(train_set);
    report.train_mse.push_back(mse);
    report.heldout_error.push_back(classification_error(net, heldout));
    if (on_epoch) on_epoch(epoch, net, report);
  }
  report.stability = stability_score(report.heldout_error, cfg.warmup);
  return report;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckOptions {
  std::size_t sampled = 500;  // C2/C4 parameters drawn at random
  double step = 1e-6;
  PenaltyConfig penalty = PenaltyConfig::neutral();
  /// Relative errors are |a - n| / max(|a|, |n|, floor); the floor only
  /// guards 0/0 for parameters with exactly zero gradient.
  double floor = 1e-12;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

using BackwardFn = std::function<Gradients(const Network&, const ForwardTrace&, double)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Random network (non-zero biases) and random input; compares `backward_fn`
/// against central differences of alpha * 0.5 (t - y)^2 evaluated by the
/// long double reference forward, with alpha frozen at its value for the
/// unperturbed output. Every FC and S3 parameter is checked, plus
/// `opts.sampled` distinct C2/C4 parameters.
inline GradCheckReport gradient_check(const NetConfig& config, Rng& rng, const GradCheckOptions& opts = {},
                                      const BackwardFn& backward_fn = backward) {
  Network net = init(config, rng);
  for (double& v : net.params.c2_bias.values()) v = rng.uniform(-0.1, 0.1);
  for (double& v : net.params.s3_bias.values()) v = rng.uniform(-0.1, 0.1);
  for (double& v : net.params.s3_beta.values()) v *= rng.uniform(0.5, 1.5);
  for (auto& b : net.params.c4_bias)
    for (double& v : b.values()) v = rng.uniform(-0.1, 0.1);
  net.params.fc_bias[0] = rng.uniform(-0.1, 0.1);

  ChannelStack stack{Tensor({config.in_channels, config.window_h, config.window_w})};
  for (double& v : stack.channels.values()) v = rng.uniform(-2.0, 2.0);
  const double target = static_cast<double>(rng.below(2));

  const ForwardTrace base = forward(net, stack);
  const OutputDelta od = output_delta(base.score, base.out_pre, target, opts.penalty);
  const Gradients analytic = backward_fn(net, base, od.delta);

  GradCheckReport report;
  reference::Forward<long double> ref(net, stack.channels);
  const long double alpha = od.alpha;
  const long double t_ld = target;
  auto ref_loss = [&] {
    const long double e = t_ld - ref.score();
    return alpha * 0.5L * e * e;
  };

  // Central difference of the reference loss, recomputing only what `param` feeds.
  auto probe = [&](Tensor& param, std::size_t idx, const std::function<void()>& recompute) {
    const double orig = param[idx];
    const double hi = orig + opts.step, lo = orig - opts.step;
    param[idx] = hi;
    recompute();
    const long double up = ref_loss();
    param[idx] = lo;
    recompute();
    const long double down = ref_loss();
    param[idx] = orig;
    recompute();
    return static_cast<double>((up - down) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
  };
  auto record = [&](const std::string& name, std::size_t idx, double a, double n) {
    const double r = relative_error(a, n, opts.floor);
    ++report.checked;
    if (r > report.max_rel_error || report.worst_param.empty()) {
      report.max_rel_error = r;
      report.worst_param = name + "[" + std::to_string(idx) + "]";
    }
  };

  auto& P = net.params;
  const auto from_fc = [&] { ref.update_fc(); };
  for (std::size_t i = 0; i < P.fc_weight.size(); ++i)
    record("fc.weight", i, analytic.fc_weight[i], probe(P.fc_weight, i, from_fc));
  record("fc.bias", 0, analytic.fc_bias[0], probe(P.fc_bias, 0, from_fc));

  for (std::size_t k = 0; k < config.c2_maps; ++k) {
    const auto from_s3 = [&] { ref.update_s3(k); };
    record("s3.beta", k, analytic.s3_beta[k], probe(P.s3_beta, k, from_s3));
    record("s3.bias", k, analytic.s3_bias[k], probe(P.s3_bias, k, from_s3));
  }

  struct Slot {
    Tensor* param;
    const Tensor* grad;
    std::string name;
    bool c2;
  };
  std::vector<Slot> slots = {{&P.c2_weight, &analytic.c2_weight, "c2.weight", true},
                             {&P.c2_bias, &analytic.c2_bias, "c2.bias", true}};
  for (std::size_t e = 0; e < config.c4_bank.size(); ++e) {
    slots.push_back({&P.c4_weight[e], &analytic.c4_weight[e], "c4." + std::to_string(e) + ".weight", false});
    slots.push_back({&P.c4_bias[e], &analytic.c4_bias[e], "c4." + std::to_string(e) + ".bias", false});
  }
  std::size_t pool = 0;
  for (const auto& s : slots) pool += s.param->size();
  std::set<std::size_t> chosen;
  const std::size_t want = std::min(opts.sampled, pool);
  while (chosen.size() < want) chosen.insert(rng.below(pool));

  for (std::size_t flat : chosen) {
    std::size_t si = 0;
    while (flat >= slots[si].param->size()) flat -= slots[si++].param->size();
    const Slot& s = slots[si];
    std::function<void()> recompute;
    if (s.c2) {
      const std::size_t k = flat / (s.param->size() / config.c2_maps);
      recompute = [&, k] { ref.update_c2(k); };
    } else {
      recompute = [&] { ref.update_c4(); };
    }
    record(s.name, flat, (*s.grad)[flat], probe(*s.param, flat, recompute));
  }
  return report;
}

}  // namespace bdl
