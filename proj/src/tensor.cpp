#include "pifukit/tensor.hpp"

#include <Eigen/Core>
#include <numeric>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace pifukit {

#ifdef __GLIBC__
namespace {
// Activation buffers of several MB are freed and reallocated every training
// step. Serving them from the heap instead of a fresh mmap each time removes
// the page-fault cost.
[[maybe_unused]] const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
}  // namespace
#endif

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "x" : "") << shape[i];
  s << ']';
  return s.str();
}

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeMismatch("negative extent in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  require(data_.size() == element_count(shape_),
          "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad_.assign(data_.size(), T(0));
}

// --- Conv2D ----------------------------------------------------------------------------

namespace {

// Column matrix (C*k*k) x (Ho*Wo) for one image.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int s, int Ho, int Wo, T* cols) {
  const int p = k / 2;
  const std::size_t n_out = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * n_out;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s + ki - p;
          T* out = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          const T* in = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s + kj - p;
            out[ox] = (ix >= 0 && ix < W) ? in[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int k, int s, int Ho, int Wo, T* dx) {
  const int p = k / 2;
  const std::size_t n_out = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * n_out;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s + ki - p;
          if (iy < 0 || iy >= H) continue;
          T* out = dx + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* in = row + static_cast<std::size_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s + kj - p;
            if (ix >= 0 && ix < W) out[ix] += in[ox];
          }
        }
      }
}

template <typename T>
void kaiming_uniform(Tensor<T>& w, int fan_in, StreamRng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.data()) v = static_cast<T>((2 * rng.uniform() - 1) * bound);
}

}  // namespace

template <typename T>
Conv2D<T>::Conv2D(int in, int out, int k, int s)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      stride(s),
      weight({out, in, k, k}),
      bias({out}) {
  if (in <= 0 || out <= 0) throw ConfigError("conv channel counts must be positive");
  if (k <= 0 || k % 2 == 0) throw ConfigError("conv kernel size must be odd");
  if (s != 1 && s != 2) throw ConfigError("conv stride must be 1 or 2");
}

template <typename T>
void Conv2D<T>::init(StreamRng& rng) {
  kaiming_uniform(weight, in_channels * kernel * kernel, rng);
  std::fill(bias.data().begin(), bias.data().end(), T(0));
}

template <typename T>
std::pair<int, int> Conv2D<T>::output_extent(int h, int w) const {
  return {(h + stride - 1) / stride, (w + stride - 1) / stride};
}

template <typename T>
Tensor<T> Conv2D<T>::forward(const Tensor<T>& x) const {
  require(x.rank() == 4 && x.dim(1) == in_channels,
          "conv expects N x " + std::to_string(in_channels) + " x H x W, got " + shape_string(x.shape()));
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const auto [Ho, Wo] = output_extent(H, W);
  const int K = in_channels * kernel * kernel;
  const std::size_t n_out = static_cast<std::size_t>(Ho) * Wo;
  Tensor<T> y({N, out_channels, Ho, Wo});
  AlignedVector<T> cols(static_cast<std::size_t>(K) * n_out);
  ConstMapMat<T> Wm(weight.ptr(), out_channels, K);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.ptr(), out_channels);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + static_cast<std::size_t>(n) * in_channels * H * W, in_channels, H, W, kernel, stride, Ho, Wo,
           cols.data());
    MapMat<T> Y(y.ptr() + static_cast<std::size_t>(n) * out_channels * n_out, out_channels,
                static_cast<Eigen::Index>(n_out));
    Y.noalias() = Wm * ConstMapMat<T>(cols.data(), K, static_cast<Eigen::Index>(n_out));
    Y.colwise() += b;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2D<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const auto [Ho, Wo] = output_extent(H, W);
  require(dy.rank() == 4 && dy.dim(0) == N && dy.dim(1) == out_channels && dy.dim(2) == Ho && dy.dim(3) == Wo,
          "conv upstream gradient has shape " + shape_string(dy.shape()));
  const int K = in_channels * kernel * kernel;
  const std::size_t n_out = static_cast<std::size_t>(Ho) * Wo;
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(x.shape());
  AlignedVector<T> cols(static_cast<std::size_t>(K) * n_out);
  MapMat<T> dW(weight.grad().data(), out_channels, K);
  const auto db = bias.grad();
  ConstMapMat<T> Wm(weight.ptr(), out_channels, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + static_cast<std::size_t>(n) * in_channels * H * W, in_channels, H, W, kernel, stride, Ho, Wo,
           cols.data());
    ConstMapMat<T> dY(dy.ptr() + static_cast<std::size_t>(n) * out_channels * n_out, out_channels,
                      static_cast<Eigen::Index>(n_out));
    ConstMapMat<T> C(cols.data(), K, static_cast<Eigen::Index>(n_out));
    dW.noalias() += dY * C.transpose();
    for (int o = 0; o < out_channels; ++o) {
      const T* row = dy.ptr() + (static_cast<std::size_t>(n) * out_channels + o) * n_out;
      T s = 0;
      for (std::size_t i = 0; i < n_out; ++i) s += row[i];
      db[o] += s;
    }
    if (need_dx) {
      MapMat<T> dC(cols.data(), K, static_cast<Eigen::Index>(n_out));
      RowMat<T> tmp = Wm.transpose() * dY;
      dC = tmp;
      col2im(cols.data(), in_channels, H, W, kernel, stride, Ho, Wo,
             dx.ptr() + static_cast<std::size_t>(n) * in_channels * H * W);
    }
  }
  return dx;
}

// --- Linear ----------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(int in, int out) : in_features(in), out_features(out), weight({out, in}), bias({out}) {
  if (in <= 0 || out <= 0) throw ConfigError("linear feature counts must be positive");
}

template <typename T>
void Linear<T>::init(StreamRng& rng) {
  kaiming_uniform(weight, in_features, rng);
  std::fill(bias.data().begin(), bias.data().end(), T(0));
}

// Row-at-a-time kernels: every output element sums over the input features in
// the same order whatever its row, so a point's prediction does not depend on
// the batch it sits in.
template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  require(x.rank() == 2 && x.dim(1) == in_features,
          "linear expects N x " + std::to_string(in_features) + ", got " + shape_string(x.shape()));
  const int N = x.dim(0), I = in_features, O = out_features;
  AlignedVector<T> wt(static_cast<std::size_t>(I) * O);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < I; ++i) wt[static_cast<std::size_t>(i) * O + o] = weight[static_cast<std::size_t>(o) * I + i];
  Tensor<T> y({N, O});
  for (int n = 0; n < N; ++n) {
    T* out = y.ptr() + static_cast<std::size_t>(n) * O;
    const T* in = x.ptr() + static_cast<std::size_t>(n) * I;
    std::copy_n(bias.ptr(), O, out);
    for (int i = 0; i < I; ++i) {
      const T xi = in[i];
      const T* w = wt.data() + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) out[o] += xi * w[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const int N = x.dim(0), I = in_features, O = out_features;
  require(dy.rank() == 2 && dy.dim(0) == N && dy.dim(1) == O,
          "linear upstream gradient has shape " + shape_string(dy.shape()));
  const auto dW = weight.grad();
  const auto db = bias.grad();
  for (int n = 0; n < N; ++n) {
    const T* g = dy.ptr() + static_cast<std::size_t>(n) * O;
    const T* in = x.ptr() + static_cast<std::size_t>(n) * I;
    for (int o = 0; o < O; ++o) {
      db[o] += g[o];
      T* row = dW.data() + static_cast<std::size_t>(o) * I;
      const T go = g[o];
      for (int i = 0; i < I; ++i) row[i] += go * in[i];
    }
  }
  Tensor<T> dx;
  if (need_dx) {
    dx = Tensor<T>({N, I});
    for (int n = 0; n < N; ++n) {
      const T* g = dy.ptr() + static_cast<std::size_t>(n) * O;
      T* out = dx.ptr() + static_cast<std::size_t>(n) * I;
      for (int o = 0; o < O; ++o) {
        const T go = g[o];
        const T* w = weight.ptr() + static_cast<std::size_t>(o) * I;
        for (int i = 0; i < I; ++i) out[i] += go * w[i];
      }
    }
  }
  return dx;
}

// --- elementwise ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  require(x.same_shape(dy), "relu gradient shape mismatch");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  require(y.same_shape(dy), "sigmoid gradient shape mismatch");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
  return dx;
}

namespace {

// (outer, inner) split around axis 1.
std::pair<std::size_t, std::size_t> axis1_split(const std::vector<int>& shape) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= static_cast<std::size_t>(shape[i]);
  return {static_cast<std::size_t>(shape[0]), inner};
}

}  // namespace

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && a.rank() == b.rank(), "concat needs tensors of equal rank >= 2");
  for (int i = 0; i < a.rank(); ++i)
    if (i != 1) require(a.dim(i) == b.dim(i), "concat extents differ: " + shape_string(a.shape()) + " vs " +
                                                  shape_string(b.shape()));
  std::vector<int> shape = a.shape();
  shape[1] = a.dim(1) + b.dim(1);
  Tensor<T> y(shape);
  const auto [outer, inner] = axis1_split(a.shape());
  const std::size_t na = static_cast<std::size_t>(a.dim(1)) * inner, nb = static_cast<std::size_t>(b.dim(1)) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.ptr() + o * na, na, y.ptr() + o * (na + nb));
    std::copy_n(b.ptr() + o * nb, nb, y.ptr() + o * (na + nb) + na);
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& dy, int a_channels) {
  require(dy.rank() >= 2 && a_channels >= 0 && a_channels <= dy.dim(1), "concat_backward split out of range");
  std::vector<int> sa = dy.shape(), sb = dy.shape();
  sa[1] = a_channels;
  sb[1] = dy.dim(1) - a_channels;
  Tensor<T> da(sa), db(sb);
  const auto [outer, inner] = axis1_split(dy.shape());
  const std::size_t na = static_cast<std::size_t>(sa[1]) * inner, nb = static_cast<std::size_t>(sb[1]) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(dy.ptr() + o * (na + nb), na, da.ptr() + o * na);
    std::copy_n(dy.ptr() + o * (na + nb) + na, nb, db.ptr() + o * nb);
  }
  return {std::move(da), std::move(db)};
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "add shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

// --- resampling --------------------------------------------------------------------------

namespace {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Source taps for each output index of a factor-f half-pixel upsampling.
std::vector<Tap> upsample_taps(int n_in, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(n_in) * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > n_in - 1) i0 = n_in - 1;
    const int i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

void check_factor(int factor) {
  if (factor != 2 && factor != 4) throw ShapeMismatch("upsample factor must be 2 or 4");
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  check_factor(factor);
  require(x.rank() == 4, "bilinear_upsample expects N x C x H x W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = upsample_taps(H, factor), tx = upsample_taps(W, factor);
  Tensor<T> y({N, C, H * factor, W * factor});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < H * factor; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (int ox = 0; ox < W * factor; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          y.at(n, c, oy, ox) = wy0 * (wx0 * x.at(n, c, a.i0, b.i0) + wx1 * x.at(n, c, a.i0, b.i1)) +
                               wy1 * (wx0 * x.at(n, c, a.i1, b.i0) + wx1 * x.at(n, c, a.i1, b.i1));
        }
      }
  return y;
}

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, const std::vector<int>& input_shape, int factor) {
  check_factor(factor);
  require(input_shape.size() == 4 && dy.rank() == 4 && dy.dim(0) == input_shape[0] && dy.dim(1) == input_shape[1] &&
              dy.dim(2) == input_shape[2] * factor && dy.dim(3) == input_shape[3] * factor,
          "bilinear_upsample_backward shape mismatch");
  const int N = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const auto ty = upsample_taps(H, factor), tx = upsample_taps(W, factor);
  Tensor<T> dx(input_shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < H * factor; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (int ox = 0; ox < W * factor; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          const T g = dy.at(n, c, oy, ox);
          dx.at(n, c, a.i0, b.i0) += wy0 * wx0 * g;
          dx.at(n, c, a.i0, b.i1) += wy0 * wx1 * g;
          dx.at(n, c, a.i1, b.i0) += wy1 * wx0 * g;
          dx.at(n, c, a.i1, b.i1) += wy1 * wx1 * g;
        }
      }
  return dx;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "avg_pool2 needs even spatial extents");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
  Tensor<T> y({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          y.at(n, c, i, j) = T(0.25) * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) +
                                        x.at(n, c, 2 * i + 1, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j + 1));
  return y;
}

namespace {

struct Bilerp {
  int x0, x1, y0, y1;
  double wx, wy;
};

Bilerp bilerp(const MapCoord& p, int H, int W) {
  const double x = std::clamp(p.x, 0.0, static_cast<double>(W - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(H - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), W - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), H - 1);
  return {x0, std::min(x0 + 1, W - 1), y0, std::min(y0 + 1, H - 1), x - x0, y - y0};
}

}  // namespace

template <typename T>
Tensor<T> sample_points(const Tensor<T>& map, std::span<const MapCoord> coords) {
  require(map.rank() == 4 && map.dim(0) == 1, "sample_points expects a 1 x C x H x W map");
  const int C = map.dim(1), H = map.dim(2), W = map.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor<T> out({static_cast<int>(coords.size()), C});
  parallel_for(coords.size(), 1024, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Bilerp b = bilerp(coords[i], H, W);
      const T wx = static_cast<T>(b.wx), wy = static_cast<T>(b.wy);
      const std::size_t o00 = static_cast<std::size_t>(b.y0) * W + b.x0, o01 = static_cast<std::size_t>(b.y0) * W + b.x1;
      const std::size_t o10 = static_cast<std::size_t>(b.y1) * W + b.x0, o11 = static_cast<std::size_t>(b.y1) * W + b.x1;
      T* row = out.ptr() + i * C;
      for (int c = 0; c < C; ++c) {
        const T* m = map.ptr() + c * plane;
        row[c] = (T(1) - wy) * ((T(1) - wx) * m[o00] + wx * m[o01]) + wy * ((T(1) - wx) * m[o10] + wx * m[o11]);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> sample_points_backward(const Tensor<T>& dy, std::span<const MapCoord> coords,
                                 const std::vector<int>& map_shape) {
  require(map_shape.size() == 4 && map_shape[0] == 1, "sample_points_backward expects a 1 x C x H x W map");
  const int C = map_shape[1], H = map_shape[2], W = map_shape[3];
  require(dy.rank() == 2 && dy.dim(0) == static_cast<int>(coords.size()) && dy.dim(1) == C,
          "sample_points_backward gradient shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor<T> dmap(map_shape);
  // Serial scatter keeps the summation order fixed.
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Bilerp b = bilerp(coords[i], H, W);
    const T wx = static_cast<T>(b.wx), wy = static_cast<T>(b.wy);
    const std::size_t o00 = static_cast<std::size_t>(b.y0) * W + b.x0, o01 = static_cast<std::size_t>(b.y0) * W + b.x1;
    const std::size_t o10 = static_cast<std::size_t>(b.y1) * W + b.x0, o11 = static_cast<std::size_t>(b.y1) * W + b.x1;
    const T* g = dy.ptr() + i * C;
    for (int c = 0; c < C; ++c) {
      T* m = dmap.ptr() + c * plane;
      m[o00] += (T(1) - wy) * (T(1) - wx) * g[c];
      m[o01] += (T(1) - wy) * wx * g[c];
      m[o10] += wy * (T(1) - wx) * g[c];
      m[o11] += wy * wx * g[c];
    }
  }
  return dmap;
}

// --- losses --------------------------------------------------------------------------------

template <typename T>
LossResult<T> mse_from_logits(const Tensor<T>& logits, std::span<const T> targets) {
  require(logits.size() == targets.size() && !targets.empty(), "loss needs one target per prediction");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  const double inv = 1.0 / static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    const double e = p - static_cast<double>(targets[i]);
    r.loss += e * e * inv;
    r.dlogits[i] = static_cast<T>(2.0 * e * p * (1.0 - p) * inv);
  }
  return r;
}

template <typename T>
LossResult<T> bce_from_logits(const Tensor<T>& logits, std::span<const T> targets) {
  require(logits.size() == targets.size() && !targets.empty(), "loss needs one target per prediction");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  const double inv = 1.0 / static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double z = logits[i], y = targets[i];
    r.loss += (std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)))) * inv;
    const double p = 1.0 / (1.0 + std::exp(-z));
    r.dlogits[i] = static_cast<T>((p - y) * inv);
  }
  return r;
}

// --- Adam -------------------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) {
    for (auto* p : params) {
      state.m.emplace_back(p->size(), T(0));
      state.v.emplace_back(p->size(), T(0));
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "Adam state holds " + std::to_string(state.m.size()) + " tensors for " + std::to_string(params.size()) +
              " parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    require(state.m[k].size() == p.size() && state.v[k].size() == p.size(), "Adam state shape mismatch");
    const auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<T>(cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i]);
      v[i] = static_cast<T>(cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i]);
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p[i] = static_cast<T>(p[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// --- gradient check ------------------------------------------------------------------------------

GradCheckReport grad_check(const std::vector<NamedTensor>& tensors, const std::function<double()>& loss,
                           const std::function<void()>& analytic, const GradCheckOptions& options) {
  for (const auto& nt : tensors) nt.tensor->zero_grad();
  analytic();
  GradCheckReport report;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Tensor<double>& x = *tensors[t].tensor;
    const std::vector<double> g(x.grad().begin(), x.grad().end());
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_tensor) {
      StreamRng rng(salted(options.seed, StreamSalt::Init), t);
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = x[i];
      x[i] = saved + options.h;
      const double lp = loss();
      x[i] = saved - options.h;
      const double lm = loss();
      x[i] = saved;
      const double numeric = (lp - lm) / (2 * options.h);
      const double rel =
          std::abs(g[i] - numeric) / std::max({std::abs(g[i]), std::abs(numeric), options.denom_floor});
      ++report.coordinates;
      if (rel > report.max_rel_error || report.worst_tensor.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_tensor = tensors[t].name;
          report.worst_index = i;
          report.worst_analytic = g[i];
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

// --- instantiations --------------------------------------------------------------------------------

#define PIFUKIT_INSTANTIATE(T)                                                                                 \
  template class Tensor<T>;                                                                                    \
  template struct Conv2D<T>;                                                                                   \
  template struct Linear<T>;                                                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&);                                               \
  template std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>&, int);                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int);                                                 \
  template Tensor<T> bilinear_upsample_backward(const Tensor<T>&, const std::vector<int>&, int);               \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                                              \
  template Tensor<T> sample_points(const Tensor<T>&, std::span<const MapCoord>);                               \
  template Tensor<T> sample_points_backward(const Tensor<T>&, std::span<const MapCoord>, const std::vector<int>&); \
  template LossResult<T> mse_from_logits(const Tensor<T>&, std::span<const T>);                                \
  template LossResult<T> bce_from_logits(const Tensor<T>&, std::span<const T>);                                \
  template void adam_step(std::span<Tensor<T>* const>, AdamState<T>&, const AdamConfig&);

PIFUKIT_INSTANTIATE(float)
PIFUKIT_INSTANTIATE(double)

#undef PIFUKIT_INSTANTIATE

}  // namespace pifukit
