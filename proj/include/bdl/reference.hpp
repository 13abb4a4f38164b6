#pragma once

// Direct-loop evaluation of the network in a wider scalar type, written
// independently of the tensor kernels. Used as the finite-difference oracle:
// with T = long double (64-bit mantissa on x86-64) a central difference at
// step 1e-6 is no longer dominated by float64 rounding in the forward pass.
//
// Layers can be recomputed selectively after a single parameter changes.

#include <cmath>
#include <vector>

#include "bdl/net.hpp"

namespace bdl::reference {

template <class T>
class Forward {
 public:
  Forward(const Network& net, const Tensor& input) : net_(net), cfg_(net.config) {
    const std::size_t k = cfg_.c2_maps;
    input_.assign(input.values().begin(), input.values().end());
    c2_.assign(k * cfg_.window_h * cfg_.window_w, T(0));
    sums_.assign(k * cfg_.pooled_h() * cfg_.pooled_w(), T(0));
    s3_.assign(sums_.size(), T(0));
    fc_in_.assign(cfg_.fc_in(), T(0));
    for (std::size_t m = 0; m < k; ++m) c2_map(m);
    for (std::size_t m = 0; m < k; ++m) s3_map(m);
    c4();
    fc();
  }

  T out_pre() const { return out_pre_; }
  T score() const { return T(1) / (T(1) + std::exp(-out_pre_)); }

  /// After a change to C2 kernel/bias of map m.
  void update_c2(std::size_t m) {
    c2_map(m);
    s3_map(m);
    c4();
    fc();
  }
  /// After a change to S3 beta/bias of map m.
  void update_s3(std::size_t m) {
    s3_map(m);
    c4();
    fc();
  }
  void update_c4() {
    c4();
    fc();
  }
  void update_fc() { fc(); }

 private:
  static T sig(T u) { return T(1) / (T(1) + std::exp(-u)); }

  void c2_map(std::size_t m) {
    const std::size_t h = cfg_.window_h, w = cfg_.window_w, kk = cfg_.c2_kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kk / 2);
    const auto& wt = net_.params.c2_weight;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        T acc = T(net_.params.c2_bias[m]);
        for (std::size_t c = 0; c < cfg_.in_channels; ++c) {
          for (std::size_t i = 0; i < kk; ++i) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + i) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < kk; ++j) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + j) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += T(wt[((m * cfg_.in_channels + c) * kk + i) * kk + j]) *
                     input_[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
          }
        }
        c2_[(m * h + y) * w + x] = sig(acc);
      }
    }
  }

  void s3_map(std::size_t m) {
    const std::size_t p = cfg_.pool, ph = cfg_.pooled_h(), pw = cfg_.pooled_w(), w = cfg_.window_w;
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        T s = T(0);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j) s += c2_[(m * cfg_.window_h + y * p + i) * w + x * p + j];
        const std::size_t idx = (m * ph + y) * pw + x;
        sums_[idx] = s;
        s3_[idx] = sig(T(net_.params.s3_beta[m]) * s + T(net_.params.s3_bias[m]));
      }
    }
  }

  void c4() {
    const std::size_t ph = cfg_.pooled_h(), pw = cfg_.pooled_w();
    std::size_t out = 0;
    for (std::size_t e = 0; e < cfg_.c4_bank.size(); ++e) {
      const auto& f = cfg_.c4_bank[e];
      const auto& wt = net_.params.c4_weight[e];
      const std::size_t oh = ph - f.kh + 1, ow = pw - f.kw + 1;
      for (std::size_t n = 0; n < f.count; ++n) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            T acc = T(net_.params.c4_bias[e][n]);
            for (std::size_t c = 0; c < cfg_.c2_maps; ++c)
              for (std::size_t i = 0; i < f.kh; ++i)
                for (std::size_t j = 0; j < f.kw; ++j)
                  acc += T(wt[((n * cfg_.c2_maps + c) * f.kh + i) * f.kw + j]) *
                         s3_[(c * ph + y + i) * pw + x + j];
            fc_in_[out++] = sig(acc);
          }
        }
      }
    }
  }

  void fc() {
    T u = T(net_.params.fc_bias[0]);
    for (std::size_t i = 0; i < fc_in_.size(); ++i) u += T(net_.params.fc_weight[i]) * fc_in_[i];
    out_pre_ = u;
  }

  const Network& net_;
  NetConfig cfg_;
  std::vector<T> input_, c2_, sums_, s3_, fc_in_;
  T out_pre_ = T(0);
};

}  // namespace bdl::reference
