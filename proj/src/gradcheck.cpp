#include "pifukit/gradcheck.hpp"

#include "pifukit/model.hpp"

namespace pifukit {

namespace {

using T = Tensor<double>;

T random_tensor(std::vector<int> shape, std::uint64_t seed, std::uint64_t stream, double scale = 1.0) {
  T t(std::move(shape));
  StreamRng rng(salted(seed, StreamSalt::Init), stream);
  for (auto& v : t.data()) v = (2 * rng.uniform() - 1) * scale;
  return t;
}

// sum(r * y): linear in y, so the upstream gradient is r.
double dot_with(const T& y, const T& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

void accumulate(T& x, const T& d) {
  for (std::size_t i = 0; i < d.size(); ++i) x.grad()[i] += d[i];
}

KernelCheck finish(std::string name, const GradCheckReport& r, double threshold) {
  return {std::move(name), r.max_rel_error, threshold, r.coordinates, r.worst_tensor, r.max_rel_error < threshold};
}

}  // namespace

std::vector<KernelCheck> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<KernelCheck> out;
  GradCheckOptions opt;
  opt.seed = seed;

  for (int stride : {1, 2}) {
    Conv2D<double> c(3, 4, 3, stride);
    StreamRng rng(salted(seed, StreamSalt::Init), 100 + stride);
    c.init(rng);
    c.bias = random_tensor({4}, seed, 1);
    T x = random_tensor({2, 3, 7, 6}, seed, 2);
    const auto [ho, wo] = c.output_extent(7, 6);
    const T r = random_tensor({2, 4, ho, wo}, seed, 3);
    const auto rep = grad_check(
        {{"weight", &c.weight}, {"bias", &c.bias}, {"x", &x}}, [&] { return dot_with(c.forward(x), r); },
        [&] { accumulate(x, c.backward(x, r)); }, opt);
    out.push_back(finish("conv2d_stride" + std::to_string(stride), rep, 1e-4));
  }

  for (int f : {2, 4}) {
    T x = random_tensor({1, 2, 5, 4}, seed, 10 + f);
    const T r = random_tensor({1, 2, 5 * f, 4 * f}, seed, 20 + f);
    const auto rep = grad_check(
        {{"x", &x}}, [&] { return dot_with(bilinear_upsample(x, f), r); },
        [&] { accumulate(x, bilinear_upsample_backward(r, x.shape(), f)); }, opt);
    out.push_back(finish("bilinear_upsample_x" + std::to_string(f), rep, 1e-4));
  }

  {
    Linear<double> l(5, 4);
    StreamRng rng(salted(seed, StreamSalt::Init), 30);
    l.init(rng);
    l.bias = random_tensor({4}, seed, 31);
    T x = random_tensor({6, 5}, seed, 32);
    const T r = random_tensor({6, 4}, seed, 33);
    const auto rep = grad_check(
        {{"weight", &l.weight}, {"bias", &l.bias}, {"x", &x}}, [&] { return dot_with(l.forward(x), r); },
        [&] { accumulate(x, l.backward(x, r)); }, opt);
    out.push_back(finish("linear", rep, 1e-6));
  }

  {
    T x = random_tensor({3, 7}, seed, 40);
    const T r = random_tensor({3, 7}, seed, 41);
    auto rep = grad_check(
        {{"x", &x}}, [&] { return dot_with(relu(x), r); }, [&] { accumulate(x, relu_backward(x, r)); }, opt);
    out.push_back(finish("relu", rep, 1e-4));
    rep = grad_check(
        {{"x", &x}}, [&] { return dot_with(sigmoid(x), r); },
        [&] { accumulate(x, sigmoid_backward(sigmoid(x), r)); }, opt);
    out.push_back(finish("sigmoid", rep, 1e-4));
  }

  {
    T a = random_tensor({1, 2, 3, 3}, seed, 50), b = random_tensor({1, 3, 3, 3}, seed, 51);
    const T r = random_tensor({1, 5, 3, 3}, seed, 52);
    auto rep = grad_check(
        {{"a", &a}, {"b", &b}}, [&] { return dot_with(concat(a, b), r); },
        [&] {
          const auto [da, db] = concat_backward(r, 2);
          accumulate(a, da);
          accumulate(b, db);
        },
        opt);
    out.push_back(finish("concat", rep, 1e-4));
  }

  {
    T map = random_tensor({1, 3, 5, 6}, seed, 60);
    std::vector<MapCoord> coords;
    StreamRng rng(salted(seed, StreamSalt::Init), 61);
    for (int i = 0; i < 9; ++i) coords.push_back({6.6 * rng.uniform() - 0.8, 5.6 * rng.uniform() - 0.8});
    const T r = random_tensor({9, 3}, seed, 62);
    const auto rep = grad_check(
        {{"map", &map}}, [&] { return dot_with(sample_points(map, std::span<const MapCoord>(coords)), r); },
        [&] { accumulate(map, sample_points_backward(r, std::span<const MapCoord>(coords), map.shape())); }, opt);
    out.push_back(finish("sample_points", rep, 1e-4));
  }

  {
    T z = random_tensor({8}, seed, 70, 3.0);
    std::vector<double> y;
    StreamRng rng(salted(seed, StreamSalt::Init), 71);
    for (int i = 0; i < 8; ++i) y.push_back(rng.uniform());
    for (bool bce : {false, true}) {
      const auto eval = [&] {
        return bce ? bce_from_logits(z, std::span<const double>(y)) : mse_from_logits(z, std::span<const double>(y));
      };
      const auto rep = grad_check(
          {{"logits", &z}}, [&] { return eval().loss; }, [&] { accumulate(z, eval().dlogits); }, opt);
      out.push_back(finish(bce ? "bce_from_logits" : "mse_from_logits", rep, 1e-4));
    }
  }

  for (Fusion fusion : {Fusion::Hri, Fusion::LateFusion}) {
    ModelConfig c;
    c.r_low = 16;
    c.r_high = 32;
    c.c_feat = 4;
    c.backbone_width = 3;
    c.hri_width = 3;
    c.parse_classes = 2;
    c.low_hidden = {6, 5};
    c.tap_index = 0;
    c.high_hidden = {5};
    c.fusion = fusion;
    c.seed = seed;
    Model<double> m(c);
    ViewInput<double> view;
    view.camera = Camera::with_default_scale(32);
    view.low = random_tensor({1, c.backbone_channels(), 16, 16}, seed, 80);
    view.high = random_tensor({1, c.hri_channels(), 32, 32}, seed, 81);
    std::vector<Vec3> pts;
    std::vector<double> y;
    StreamRng rng(salted(seed, StreamSalt::Init), 82);
    for (int i = 0; i < 40; ++i) {
      pts.push_back({1.8 * rng.uniform() - 0.9, 1.8 * rng.uniform() - 0.9, 1.8 * rng.uniform() - 0.9});
      y.push_back(rng.uniform());
    }
    std::vector<NamedTensor> tensors;
    for (auto& p : m.all_parameters()) tensors.push_back({p.name, p.tensor});
    GradCheckOptions mopt = opt;
    mopt.h = 1e-6;
    mopt.max_coords_per_tensor = 64;
    const auto rep = grad_check(
        tensors, [&] { return m.loss(view, pts, std::span<const double>(y), LossKind::Mse, TrainStage::Hri); },
        [&] { m.step(view, pts, std::span<const double>(y), LossKind::Mse, TrainStage::Hri, true); }, mopt);
    out.push_back(finish("model_graph_" + to_string(fusion), rep, 1e-3));
  }
  return out;
}

}  // namespace pifukit
