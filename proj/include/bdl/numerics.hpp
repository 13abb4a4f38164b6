#pragma once

// Dense float64 tensors, a seeded generator, and the correlation / pooling /
// resize kernels every other module is built on.
//
// Convolution orientation: cross-correlation, no kernel flip.
//   out[k][y][x] = bias[k] + sum_c sum_i sum_j in[c][y + i - p][x + j - p] * w[k][c][i][j]
// where p = (kh - 1) / 2 for `same` (zero padding, odd kernels only) and p = 0 for `valid`.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bdl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == count(shape_), "tensor data length " + std::to_string(data_.size()) +
                                               " does not match shape " + shape_string(shape_));
  }

  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::string shape_string() const { return shape_string(shape_); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous view of the i-th sub-tensor along axis 0.
  std::span<double> plane(std::size_t i) {
    const std::size_t n = data_.size() / shape_[0];
    return {data_.data() + i * n, n};
  }
  std::span<const double> plane(std::size_t i) const {
    const std::size_t n = data_.size() / shape_[0];
    return {data_.data() + i * n, n};
  }

  // Copy of the i-th sub-tensor along axis 0.
  Tensor slice(std::size_t i) const {
    Shape s(shape_.begin() + 1, shape_.end());
    auto p = plane(i);
    return Tensor(std::move(s), std::vector<double>(p.begin(), p.end()));
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  // Bitwise equality of shape and payload (distinguishes -0.0 and NaN payloads).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

inline double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

/// SplitMix64 (Steele, Lea, Flood 2014). State advances by the golden-ratio
/// increment 0x9E3779B97F4A7C15 and each output is the standard mix of the new
/// state. Everything derived from it (uniform doubles, bounded integers,
/// shuffles) is defined here so the stream is platform independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below requires n > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// Independent child stream seeded from this one.
  Rng fork() { return Rng(next_u64()); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

enum class Padding { same, valid };

namespace detail {

inline void check_conv_shapes(const Tensor& input, const Tensor& kernels, Padding padding) {
  require(input.rank() == 3, "conv2d: input must be [C,H,W], got " + input.shape_string());
  require(kernels.rank() == 4, "conv2d: kernels must be [K,C,kh,kw], got " + kernels.shape_string());
  require(kernels.dim(1) == input.dim(0),
          "conv2d: kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
              std::to_string(input.dim(0)));
  const std::size_t kh = kernels.dim(2), kw = kernels.dim(3);
  if (padding == Padding::same) {
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: same padding requires odd kernels, got " +
                                            std::to_string(kh) + "x" + std::to_string(kw));
  } else {
    require(kh <= input.dim(1) && kw <= input.dim(2),
            "conv2d: valid kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " larger than input " + input.shape_string());
  }
}

// acc[oy][ox] += w * in[oy + dy][ox + dx] over the output rectangle, skipping
// input positions outside [0,H)x[0,W) (zero padding).
inline void accumulate_shifted(double* acc, std::size_t oh, std::size_t ow, const double* in,
                               std::size_t h, std::size_t w, std::ptrdiff_t dy, std::ptrdiff_t dx,
                               double weight) {
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(oh, static_cast<std::ptrdiff_t>(h) - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ow, static_cast<std::ptrdiff_t>(w) - dx);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    double* a = acc + y * ow;
    const double* s = in + (y + dy) * static_cast<std::ptrdiff_t>(w) + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) a[x] += weight * s[x];
  }
}

// sum over the output rectangle of a[oy][ox] * in[oy + dy][ox + dx].
inline double dot_shifted(const double* a, std::size_t oh, std::size_t ow, const double* in,
                          std::size_t h, std::size_t w, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(oh, static_cast<std::ptrdiff_t>(h) - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ow, static_cast<std::ptrdiff_t>(w) - dx);
  double s = 0.0;
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    const double* ar = a + y * ow;
    const double* ir = in + (y + dy) * static_cast<std::ptrdiff_t>(w) + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) s += ar[x] * ir[x];
  }
  return s;
}

}  // namespace detail

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, Padding padding) {
  return padding == Padding::same ? in : in - k + 1;
}

/// Computes only output map `k` into `out` (length H'*W'). conv2d is this
/// applied to every k, so a single-map recompute is bitwise identical.
inline void conv2d_map(const Tensor& input, const Tensor& kernels, double bias, std::size_t k,
                       Padding padding, std::span<double> out) {
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t kh = kernels.dim(2), kw = kernels.dim(3);
  const std::size_t oh = conv_out_dim(h, kh, padding), ow = conv_out_dim(w, kw, padding);
  const std::ptrdiff_t py = padding == Padding::same ? static_cast<std::ptrdiff_t>(kh - 1) / 2 : 0;
  const std::ptrdiff_t px = padding == Padding::same ? static_cast<std::ptrdiff_t>(kw - 1) / 2 : 0;
  std::fill(out.begin(), out.end(), bias);
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* in = input.plane(c).data();
    const double* wk = kernels.data() + ((k * c_in + c) * kh) * kw;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        detail::accumulate_shifted(out.data(), oh, ow, in, h, w, static_cast<std::ptrdiff_t>(i) - py,
                                   static_cast<std::ptrdiff_t>(j) - px, wk[i * kw + j]);
      }
    }
  }
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Padding padding) {
  detail::check_conv_shapes(input, kernels, padding);
  const std::size_t k_out = kernels.dim(0);
  require(bias.size() == k_out, "conv2d: bias length " + std::to_string(bias.size()) +
                                    " != kernel count " + std::to_string(k_out));
  const std::size_t oh = conv_out_dim(input.dim(1), kernels.dim(2), padding);
  const std::size_t ow = conv_out_dim(input.dim(2), kernels.dim(3), padding);
  Tensor out({k_out, oh, ow});
  for (std::size_t k = 0; k < k_out; ++k) conv2d_map(input, kernels, bias[k], k, padding, out.plane(k));
  return out;
}

/// Gradient of sum(grad_out * conv2d(input, W)) with respect to W.
inline Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kh,
                                 std::size_t kw, Padding padding) {
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t k_out = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  require(oh == conv_out_dim(h, kh, padding) && ow == conv_out_dim(w, kw, padding),
          "conv2d_weight_grad: grad_out " + grad_out.shape_string() + " inconsistent with input " +
              input.shape_string());
  const std::ptrdiff_t py = padding == Padding::same ? static_cast<std::ptrdiff_t>(kh - 1) / 2 : 0;
  const std::ptrdiff_t px = padding == Padding::same ? static_cast<std::ptrdiff_t>(kw - 1) / 2 : 0;
  Tensor g({k_out, c_in, kh, kw});
  for (std::size_t k = 0; k < k_out; ++k) {
    const double* go = grad_out.plane(k).data();
    for (std::size_t c = 0; c < c_in; ++c) {
      const double* in = input.plane(c).data();
      double* gk = g.data() + ((k * c_in + c) * kh) * kw;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          gk[i * kw + j] = detail::dot_shifted(go, oh, ow, in, h, w, static_cast<std::ptrdiff_t>(i) - py,
                                               static_cast<std::ptrdiff_t>(j) - px);
        }
      }
    }
  }
  return g;
}

/// Gradient of sum(grad_out * conv2d(input, W)) with respect to input
/// (the adjoint of the correlation, with the forward padding).
inline Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernels, std::size_t h,
                                std::size_t w, Padding padding) {
  const std::size_t k_out = kernels.dim(0), c_in = kernels.dim(1);
  const std::size_t kh = kernels.dim(2), kw = kernels.dim(3);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  require(grad_out.dim(0) == k_out && oh == conv_out_dim(h, kh, padding) &&
              ow == conv_out_dim(w, kw, padding),
          "conv2d_input_grad: grad_out " + grad_out.shape_string() + " inconsistent with kernels " +
              kernels.shape_string());
  const std::ptrdiff_t py = padding == Padding::same ? static_cast<std::ptrdiff_t>(kh - 1) / 2 : 0;
  const std::ptrdiff_t px = padding == Padding::same ? static_cast<std::ptrdiff_t>(kw - 1) / 2 : 0;
  Tensor g({c_in, h, w});
  for (std::size_t c = 0; c < c_in; ++c) {
    double* gi = g.plane(c).data();
    for (std::size_t k = 0; k < k_out; ++k) {
      const double* go = grad_out.plane(k).data();
      const double* wk = kernels.data() + ((k * c_in + c) * kh) * kw;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          // in[y][x] receives go[y - dy][x - dx] * w for shift (dy, dx).
          detail::accumulate_shifted(gi, h, w, go, oh, ow, py - static_cast<std::ptrdiff_t>(i),
                                     px - static_cast<std::ptrdiff_t>(j), wk[i * kw + j]);
        }
      }
    }
  }
  return g;
}

/// Block SUM over non-overlapping m x m tiles (no 1/m^2 factor).
inline Tensor meanpool2d(const Tensor& input, std::size_t m) {
  require(input.rank() == 3, "meanpool2d: input must be [C,H,W], got " + input.shape_string());
  require(m >= 1, "meanpool2d: block size must be positive");
  const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h % m == 0 && w % m == 0, "meanpool2d: block " + std::to_string(m) +
                                        " does not divide " + std::to_string(h) + "x" +
                                        std::to_string(w));
  const std::size_t oh = h / m, ow = w / m;
  Tensor out({c_n, oh, ow});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < m; ++j) s += input.at(c, y * m + i, x * m + j);
        out.at(c, y, x) = s;
      }
    }
  }
  return out;
}

/// Adjoint of the block sum: every cell of a tile receives the tile's value.
inline Tensor blocksum_adjoint(const Tensor& grad, std::size_t m) {
  const std::size_t c_n = grad.dim(0), oh = grad.dim(1), ow = grad.dim(2);
  Tensor out({c_n, oh * m, ow * m});
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < oh * m; ++y)
      for (std::size_t x = 0; x < ow * m; ++x) out.at(c, y, x) = grad.at(c, y / m, x / m);
  return out;
}

/// Corner-aligned bilinear resize. Output pixel (y, x) samples the source at
///   sy = y * (H - 1) / (outH - 1),  sx = x * (W - 1) / (outW - 1)
/// (sy = 0 when outH == 1, likewise for x) and interpolates the four
/// neighbours (floor(s), min(floor(s) + 1, n - 1)) with weights (1 - f, f).
inline Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require(input.rank() == 3, "resize_bilinear: input must be [C,H,W], got " + input.shape_string());
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output size must be at least 1x1");
  const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (out_h == h && out_w == w) return input;

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double s = out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) /
                                            static_cast<double>(out - 1);
      const std::size_t i0 = std::min(static_cast<std::size_t>(s), in - 1);
      t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor out({c_n, out_h, out_w});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = input.at(c, ty[y].i0, tx[x].i0) * (1.0 - tx[x].f) +
                           input.at(c, ty[y].i0, tx[x].i1) * tx[x].f;
        const double bot = input.at(c, ty[y].i1, tx[x].i0) * (1.0 - tx[x].f) +
                           input.at(c, ty[y].i1, tx[x].i1) * tx[x].f;
        out.at(c, y, x) = top * (1.0 - ty[y].f) + bot * ty[y].f;
      }
    }
  }
  return out;
}

/// Copy of the [y, y+h) x [x, x+w) window of every plane.
inline Tensor crop(const Tensor& input, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  require(input.rank() == 3, "crop: input must be [C,H,W]");
  require(y + h <= input.dim(1) && x + w <= input.dim(2), "crop: window outside image");
  Tensor out({input.dim(0), h, w});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(input.plane(c).data() + (y + i) * input.dim(2) + x, w, out.plane(c).data() + i * w);
  return out;
}

// BDLT tensor files: "BDLT", u32 version (1), u32 ndim, ndim x u32 dims,
// then row-major f64 values. All integers and floats little-endian.
namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(const std::string& buf, std::size_t pos, int nbytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kBdltVersion = 1;

inline std::string encode_bdlt(const Tensor& t) {
  std::string out = "BDLT";
  detail::put_u32(out, kBdltVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor decode_bdlt(const std::string& buf) {
  require(buf.size() >= 12 && buf.compare(0, 4, "BDLT") == 0, "BDLT: bad magic");
  const auto version = detail::get_le(buf, 4, 4);
  require(version == kBdltVersion, "BDLT: unsupported version " + std::to_string(version));
  const auto ndim = detail::get_le(buf, 8, 4);
  require(buf.size() >= 12 + 4 * ndim, "BDLT: truncated header");
  Tensor::Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = detail::get_le(buf, 12 + 4 * i, 4);
  const std::size_t n = Tensor::count(shape);
  const std::size_t off = 12 + 4 * ndim;
  require(buf.size() == off + 8 * n, "BDLT: payload length does not match shape");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i)
    data[i] = std::bit_cast<double>(detail::get_le(buf, off + 8 * i, 8));
  return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), "write failed: " + path);
}

inline void save_bdlt(const std::string& path, const Tensor& t) { write_file(path, encode_bdlt(t)); }
inline Tensor load_bdlt(const std::string& path) { return decode_bdlt(read_file(path)); }

}  // namespace bdl
