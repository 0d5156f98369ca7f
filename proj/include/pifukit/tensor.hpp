#pragma once

#include <functional>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pifukit/common.hpp"

namespace pifukit {

/// Cache-line aligned storage so vectorized kernels see the same memory
/// layout on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor with a lazily allocated gradient buffer of the same
/// shape. Instantiated for float (training) and double (gradient checks).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0));
  Tensor(std::vector<int> shape, std::vector<T> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element (n, c, h, w) of a rank-4 tensor.
  T& at(int n, int c, int h, int w) { return data_[offset4(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset4(n, c, h, w)]; }

  /// Gradient buffer, zero-filled on first access.
  std::span<T> grad();
  std::span<const T> grad() const { return grad_; }
  bool has_grad() const { return !grad_.empty(); }
  void zero_grad();

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data().begin());
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::size_t offset4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<int> shape_;
  AlignedVector<T> data_;
  AlignedVector<T> grad_;
};

std::string shape_string(const std::vector<int>& shape);

// --- layers ----------------------------------------------------------------------
//
// Backward passes accumulate parameter gradients into the parameters' grad
// buffers and return the gradient with respect to the layer input.

/// 2D cross-correlation with odd square kernels, stride 1 or 2, and `same`
/// zero padding (k / 2 on every side), so H_out = ceil(H / stride).
template <typename T>
struct Conv2D {
  int in_channels = 0, out_channels = 0, kernel = 3, stride = 1;
  Tensor<T> weight;  // out x in x k x k
  Tensor<T> bias;    // out

  Conv2D() = default;
  Conv2D(int in, int out, int kernel, int stride);

  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero bias.
  void init(StreamRng& rng);
  std::pair<int, int> output_extent(int h, int w) const;
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx = true);
};

/// y = x W^T + b on row vectors (x is N x in).
template <typename T>
struct Linear {
  int in_features = 0, out_features = 0;
  Tensor<T> weight;  // out x in
  Tensor<T> bias;    // out

  Linear() = default;
  Linear(int in, int out);

  void init(StreamRng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx = true);
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// Gradient of relu given its input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Gradient of sigmoid given its output.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// Concatenation along axis 1 (channels for N x C x H x W, features for N x F).
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& dy, int a_channels);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Bilinear upsampling by an integer factor with half-pixel centers
/// (align_corners = false) and border clamping.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor);
template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, const std::vector<int>& input_shape, int factor);

/// 2x2 mean pooling.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Continuous position on a feature map in its own pixel units (pixel centers
/// at integers).
struct MapCoord {
  double x = 0, y = 0;
};

/// Bilinear lookup of a 1 x C x H x W map at P positions, clamped to the
/// border. Returns P x C.
template <typename T>
Tensor<T> sample_points(const Tensor<T>& map, std::span<const MapCoord> coords);
template <typename T>
Tensor<T> sample_points_backward(const Tensor<T>& dy, std::span<const MapCoord> coords,
                                 const std::vector<int>& map_shape);

// --- losses --------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> dlogits;
};

/// Mean squared error between sigmoid(logits) and targets.
template <typename T>
LossResult<T> mse_from_logits(const Tensor<T>& logits, std::span<const T> targets);
/// Mean binary cross-entropy of sigmoid(logits) against targets.
template <typename T>
LossResult<T> bce_from_logits(const Tensor<T>& logits, std::span<const T> targets);

// --- optimizer -------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its grad buffer.
/// Empty state is sized on first use.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state, const AdamConfig& cfg);

// --- gradient checking -------------------------------------------------------------------

struct GradCheckOptions {
  double h = 1e-4;
  /// Tensors larger than this are checked on a seeded random subset.
  std::size_t max_coords_per_tensor = 256;
  std::uint64_t seed = 0;
  /// Floor of the relative-error denominator.
  double denom_floor = 1e-4;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0, worst_numeric = 0;
};

struct NamedTensor {
  std::string name;
  Tensor<double>* tensor;
};

/// Compares analytic gradients with central differences. Grad buffers are
/// cleared before `analytic` runs; it must accumulate d(loss)/d(tensor) into
/// the grad of every listed tensor.
/// relative error = |a - n| / max(|a|, |n|, denom_floor).
GradCheckReport grad_check(const std::vector<NamedTensor>& tensors, const std::function<double()>& loss,
                           const std::function<void()>& analytic, const GradCheckOptions& options = {});

}  // namespace pifukit
