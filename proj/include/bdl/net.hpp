#pragma once

// Five-layer classifier over a channel stack:
//   A1 input [Cin,H,W]
//   C2 same-padded k x k correlation to K maps, sigmoid        -> [K,H,W]
//   S3 m x m block sum, per-map scale beta and bias, sigmoid   -> [K,H/m,W/m]
//   C4 bank of valid correlations of several sizes, sigmoid, flattened and
//      concatenated in bank order                              -> [fc_in]
//   FC single sigmoid unit                                     -> score in (0,1)

#include <cmath>
#include <string>
#include <vector>

#include "bdl/channels.hpp"
#include "bdl/numerics.hpp"

namespace bdl {

struct C4Filter {
  std::size_t count = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  friend bool operator==(const C4Filter&, const C4Filter&) = default;
};

struct NetConfig {
  std::size_t window_h = 84;
  std::size_t window_w = 28;
  std::size_t in_channels = 4 + kDefaultOrientationBins;
  std::size_t c2_maps = 64;
  std::size_t c2_kernel = 9;
  std::size_t pool = 4;
  std::vector<C4Filter> c4_bank = {{15, 15, 4}, {4, 15, 3}, {1, 17, 7}};
  std::size_t fc_out = 1;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;

  /// Full-size geometry: 84x28 window, 64 9x9 maps, 4x4 pooling.
  static NetConfig full() { return {}; }

  /// Reduced geometry for single-core experiments: half-size window, 8 5x5
  /// maps and 2x2 pooling. The pooled maps are still 21x7, so the same C4
  /// bank yields the same 565-unit classifier input.
  static NetConfig desk() {
    NetConfig c;
    c.window_h = 42;
    c.window_w = 14;
    c.c2_maps = 8;
    c.c2_kernel = 5;
    c.pool = 2;
    return c;
  }

  std::size_t pooled_h() const { return window_h / pool; }
  std::size_t pooled_w() const { return window_w / pool; }

  std::size_t c4_filters() const {
    std::size_t n = 0;
    for (const auto& f : c4_bank) n += f.count;
    return n;
  }

  std::size_t fc_in() const {
    std::size_t n = 0;
    for (const auto& f : c4_bank) n += f.count * (pooled_h() - f.kh + 1) * (pooled_w() - f.kw + 1);
    return n;
  }

  /// Throws naming the first violated constraint.
  void validate() const {
    require(window_h > 0 && window_w > 0, "NetConfig: window must be non-empty");
    require(in_channels > 0, "NetConfig: in_channels must be positive");
    require(c2_maps > 0, "NetConfig: c2_maps must be positive");
    require(c2_kernel % 2 == 1, "NetConfig: c2_kernel must be odd for same padding (got " +
                                    std::to_string(c2_kernel) + ")");
    require(c2_kernel <= window_h && c2_kernel <= window_w,
            "NetConfig: c2_kernel larger than the window");
    require(pool >= 1 && window_h % pool == 0 && window_w % pool == 0,
            "NetConfig: pool " + std::to_string(pool) + " must divide the C2 maps " +
                std::to_string(window_h) + "x" + std::to_string(window_w));
    require(!c4_bank.empty(), "NetConfig: c4_bank must not be empty");
    for (std::size_t i = 0; i < c4_bank.size(); ++i) {
      const auto& f = c4_bank[i];
      const std::string tag = "NetConfig: c4_bank[" + std::to_string(i) + "]";
      require(f.count > 0 && f.kh > 0 && f.kw > 0, tag + " must have positive count and size");
      require(f.kh <= pooled_h() && f.kw <= pooled_w(),
              tag + " kernel " + std::to_string(f.kh) + "x" + std::to_string(f.kw) +
                  " exceeds pooled maps " + std::to_string(pooled_h()) + "x" +
                  std::to_string(pooled_w()));
    }
    require(fc_out == 1, "NetConfig: fc_out must be 1 (single sigmoid classifier)");
  }
};

/// Parameter tensors of the network; also the shape of its gradient.
struct ParamSet {
  Tensor c2_weight;  // [K, Cin, k, k]
  Tensor c2_bias;    // [K]
  Tensor s3_beta;    // [K]
  Tensor s3_bias;    // [K]
  std::vector<Tensor> c4_weight;  // per bank entry [n, K, kh, kw]
  std::vector<Tensor> c4_bias;    // per bank entry [n]
  Tensor fc_weight;  // [fc_in]
  Tensor fc_bias;    // [1]

  static ParamSet zeros(const NetConfig& cfg) {
    ParamSet p;
    const std::size_t k = cfg.c2_maps;
    p.c2_weight = Tensor({k, cfg.in_channels, cfg.c2_kernel, cfg.c2_kernel});
    p.c2_bias = Tensor({k});
    p.s3_beta = Tensor({k});
    p.s3_bias = Tensor({k});
    for (const auto& f : cfg.c4_bank) {
      p.c4_weight.emplace_back(Tensor::Shape{f.count, k, f.kh, f.kw});
      p.c4_bias.emplace_back(Tensor::Shape{f.count});
    }
    p.fc_weight = Tensor({cfg.fc_in()});
    p.fc_bias = Tensor({1});
    return p;
  }

  /// Visits (name, tensor) in canonical layer order.
  template <class Self, class F>
  static void visit(Self& self, F&& fn) {
    fn(std::string("c2.weight"), self.c2_weight);
    fn(std::string("c2.bias"), self.c2_bias);
    fn(std::string("s3.beta"), self.s3_beta);
    fn(std::string("s3.bias"), self.s3_bias);
    for (std::size_t i = 0; i < self.c4_weight.size(); ++i) {
      fn("c4." + std::to_string(i) + ".weight", self.c4_weight[i]);
      fn("c4." + std::to_string(i) + ".bias", self.c4_bias[i]);
    }
    fn(std::string("fc.weight"), self.fc_weight);
    fn(std::string("fc.bias"), self.fc_bias);
  }
  template <class F>
  void for_each(F&& fn) { visit(*this, std::forward<F>(fn)); }
  template <class F>
  void for_each(F&& fn) const { visit(*this, std::forward<F>(fn)); }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

using Gradients = ParamSet;

struct Network {
  NetConfig config;
  ParamSet params;

  friend bool operator==(const Network&, const Network&) = default;
};

struct ParamCount {
  std::size_t c2 = 0;
  std::size_t s3 = 0;
  std::size_t c4 = 0;
  std::size_t fc = 0;
  std::size_t total() const { return c2 + s3 + c4 + fc; }
};

inline ParamCount param_count(const NetConfig& cfg) {
  cfg.validate();
  ParamCount n;
  n.c2 = (cfg.c2_kernel * cfg.c2_kernel * cfg.in_channels + 1) * cfg.c2_maps;
  n.s3 = 2 * cfg.c2_maps;
  for (const auto& f : cfg.c4_bank) n.c4 += (cfg.c2_maps * f.kh * f.kw + 1) * f.count;
  n.fc = cfg.fc_in() + 1;
  return n;
}

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases,
/// beta = 1/m^2 so S3 starts as a true mean.
inline Network init(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Network net{cfg, ParamSet::zeros(cfg)};
  auto glorot = [&rng](Tensor& t, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
  };
  const double k2 = static_cast<double>(cfg.c2_kernel * cfg.c2_kernel);
  glorot(net.params.c2_weight, static_cast<double>(cfg.in_channels) * k2,
         static_cast<double>(cfg.c2_maps) * k2);
  net.params.s3_beta.fill(1.0 / static_cast<double>(cfg.pool * cfg.pool));
  for (std::size_t i = 0; i < cfg.c4_bank.size(); ++i) {
    const auto& f = cfg.c4_bank[i];
    const double area = static_cast<double>(f.kh * f.kw);
    glorot(net.params.c4_weight[i], static_cast<double>(cfg.c2_maps) * area,
           static_cast<double>(f.count) * area);
  }
  glorot(net.params.fc_weight, static_cast<double>(cfg.fc_in()), 1.0);
  return net;
}

struct ForwardTrace {
  Tensor input;   // [Cin,H,W]
  Tensor c2_pre;  // [K,H,W]
  Tensor c2_out;
  Tensor s3_sum;  // [K,H/m,W/m] block sums
  Tensor s3_pre;
  Tensor s3_out;
  std::vector<Tensor> c4_pre;  // per bank entry [n,oh,ow]
  std::vector<Tensor> c4_out;
  Tensor fc_in;   // [fc_in] concatenation of c4_out
  double out_pre = 0.0;
  double score = 0.5;
};

enum class Stage { c2, s3, c4, fc };

namespace detail {

inline void sigmoid_into(const Tensor& pre, Tensor& out) {
  if (out.shape() != pre.shape()) out = Tensor(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = sigmoid(pre[i]);
}

inline void s3_map(const Network& net, ForwardTrace& t, std::size_t k) {
  const double beta = net.params.s3_beta[k], bias = net.params.s3_bias[k];
  auto sums = t.s3_sum.plane(k);
  auto pre = t.s3_pre.plane(k);
  auto out = t.s3_out.plane(k);
  for (std::size_t i = 0; i < sums.size(); ++i) {
    pre[i] = beta * sums[i] + bias;
    out[i] = sigmoid(pre[i]);
  }
}

}  // namespace detail

/// Recomputes the trace from `from` onwards; earlier layers are reused.
inline void propagate(const Network& net, ForwardTrace& t, Stage from) {
  const auto& cfg = net.config;
  const auto& p = net.params;
  if (from <= Stage::c2) {
    t.c2_pre = conv2d(t.input, p.c2_weight, p.c2_bias, Padding::same);
    detail::sigmoid_into(t.c2_pre, t.c2_out);
    t.s3_sum = meanpool2d(t.c2_out, cfg.pool);
  }
  if (from <= Stage::s3) {
    t.s3_pre = Tensor(t.s3_sum.shape());
    t.s3_out = Tensor(t.s3_sum.shape());
    for (std::size_t k = 0; k < cfg.c2_maps; ++k) detail::s3_map(net, t, k);
  }
  if (from <= Stage::c4) {
    t.c4_pre.resize(cfg.c4_bank.size());
    t.c4_out.resize(cfg.c4_bank.size());
    t.fc_in = Tensor({cfg.fc_in()});
    std::size_t off = 0;
    for (std::size_t i = 0; i < cfg.c4_bank.size(); ++i) {
      t.c4_pre[i] = conv2d(t.s3_out, p.c4_weight[i], p.c4_bias[i], Padding::valid);
      detail::sigmoid_into(t.c4_pre[i], t.c4_out[i]);
      std::copy(t.c4_out[i].values().begin(), t.c4_out[i].values().end(), t.fc_in.data() + off);
      off += t.c4_out[i].size();
    }
  }
  double u = p.fc_bias[0];
  for (std::size_t i = 0; i < t.fc_in.size(); ++i) u += p.fc_weight[i] * t.fc_in[i];
  t.out_pre = u;
  t.score = sigmoid(u);
}

inline void check_stack(const NetConfig& cfg, const ChannelStack& stack) {
  const auto& s = stack.channels.shape();
  require(s.size() == 3 && s[0] == cfg.in_channels && s[1] == cfg.window_h && s[2] == cfg.window_w,
          "forward: stack " + stack.channels.shape_string() + " does not match network input [" +
              std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.window_h) + "x" +
              std::to_string(cfg.window_w) + "]");
}

inline ForwardTrace forward(const Network& net, const ChannelStack& stack) {
  check_stack(net.config, stack);
  ForwardTrace t;
  t.input = stack.channels;
  propagate(net, t, Stage::c2);
  return t;
}

inline double score(const Network& net, const ChannelStack& stack) { return forward(net, stack).score; }

}  // namespace bdl
