#include <doctest.h>

#include "pifukit/tensor.hpp"

using namespace pifukit;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::uint64_t stream, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  StreamRng rng(1234, stream);
  for (auto& v : t.data()) v = (2 * rng.uniform() - 1) * scale;
  return t;
}

// Direct nested-loop cross-correlation with zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Conv2D<double>& c) {
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3), k = c.kernel, p = k / 2;
  const int Ho = (H + c.stride - 1) / c.stride, Wo = (W + c.stride - 1) / c.stride;
  Tensor<double> y({N, c.out_channels, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < c.out_channels; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double s = c.bias[o];
          for (int ci = 0; ci < c.in_channels; ++ci)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int yy = i * c.stride + a - p, xx = j * c.stride + b - p;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                s += c.weight[((static_cast<std::size_t>(o) * c.in_channels + ci) * k + a) * k + b] *
                     x.at(n, ci, yy, xx);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

// Linear functional sum(r * y) of an output, so central differences are exact up to rounding.
double dot_with(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

double mean(const Tensor<double>& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("conv of ones with a ones kernel") {
  Conv2D<double> c(1, 1, 3, 1);
  std::fill(c.weight.data().begin(), c.weight.data().end(), 1.0);
  const Tensor<double> x({1, 1, 5, 5}, 1.0);
  const auto y = c.forward(x);
  CHECK(y.at(0, 0, 2, 2) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 0, 2) == 6.0);
}

TEST_CASE("identity kernel reproduces the input") {
  Conv2D<double> c(2, 2, 3, 1);
  for (int o = 0; o < 2; ++o) c.weight[((o * 2 + o) * 3 + 1) * 3 + 1] = 1.0;
  const auto x = random_tensor({2, 2, 6, 7}, 1);
  CHECK(c.forward(x).data()[0] == x.data()[0]);
  const auto y = c.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv matches a direct loop, both strides") {
  for (int stride : {1, 2}) {
    Conv2D<double> c(3, 4, 3, stride);
    StreamRng rng(5, stride);
    c.init(rng);
    c.bias = random_tensor({4}, 9);
    const auto x = random_tensor({2, 3, 7, 6}, 2);
    const auto y = c.forward(x);
    const auto ref = naive_conv(x, c);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  Conv2D<double> c(1, 1, 3, 2);
  CHECK(c.output_extent(128, 128) == std::pair{64, 64});
  CHECK(c.output_extent(7, 5) == std::pair{4, 3});
  CHECK_THROWS_AS(c.forward(Tensor<double>({1, 2, 4, 4})), ShapeMismatch);
  CHECK_THROWS_AS(Conv2D<double>(1, 1, 4, 1), ConfigError);
}

TEST_CASE("conv gradient check") {
  for (int stride : {1, 2}) {
    Conv2D<double> c(3, 2, 3, stride);
    StreamRng rng(8, stride);
    c.init(rng);
    c.bias = random_tensor({2}, 3);
    auto x = random_tensor({2, 3, 6, 5}, 4);
    const auto r = random_tensor({2, 2, stride == 1 ? 6 : 3, stride == 1 ? 5 : 3}, 5);
    const auto report = grad_check(
        {{"weight", &c.weight}, {"bias", &c.bias}, {"x", &x}}, [&] { return dot_with(c.forward(x), r); },
        [&] {
          const auto dx = c.backward(x, r);
          for (std::size_t i = 0; i < dx.size(); ++i) x.grad()[i] += dx[i];
        });
    CHECK(report.max_rel_error < 1e-4);
    CHECK(report.coordinates > 0);
  }
}

TEST_CASE("upsample known values and mean preservation") {
  // [1, 2] -> [1, 1.25, 1.75, 2] with half-pixel centers.
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{1, 2});
  const auto y = bilinear_upsample(x, 2);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 4});
  CHECK(y.at(0, 0, 0, 0) == 1.0);
  CHECK(y.at(0, 0, 0, 1) == 1.25);
  CHECK(y.at(0, 0, 0, 2) == 1.75);
  CHECK(y.at(0, 0, 0, 3) == 2.0);

  for (int f : {2, 4}) {
    const auto t = random_tensor({1, 3, 9, 7}, 10 + f);
    CHECK(mean(bilinear_upsample(t, f)) == doctest::Approx(mean(t)).epsilon(1e-12));
  }
  const Tensor<float> big({1, 2, 128, 128}, 0.5f);
  CHECK(bilinear_upsample(big, 4).shape() == std::vector<int>{1, 2, 512, 512});
  CHECK_THROWS_AS(bilinear_upsample(big, 3), ShapeMismatch);
}

TEST_CASE("upsample gradient check") {
  for (int f : {2, 4}) {
    auto x = random_tensor({1, 2, 5, 4}, 20);
    const auto r = random_tensor({1, 2, 5 * f, 4 * f}, 21);
    const auto report = grad_check(
        {{"x", &x}}, [&] { return dot_with(bilinear_upsample(x, f), r); },
        [&] {
          const auto dx = bilinear_upsample_backward(r, x.shape(), f);
          for (std::size_t i = 0; i < dx.size(); ++i) x.grad()[i] += dx[i];
        });
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("linear and three-layer MLP gradient checks") {
  StreamRng rng(3, 3);
  Linear<double> l(5, 4);
  l.init(rng);
  auto x = random_tensor({6, 5}, 30);
  const auto r = random_tensor({6, 4}, 31);
  auto report = grad_check(
      {{"w", &l.weight}, {"b", &l.bias}, {"x", &x}}, [&] { return dot_with(l.forward(x), r); },
      [&] {
        const auto dx = l.backward(x, r);
        for (std::size_t i = 0; i < dx.size(); ++i) x.grad()[i] += dx[i];
      });
  CHECK(report.max_rel_error < 1e-6);

  Linear<double> a(5, 8), b(8, 6), c(6, 1);
  a.init(rng);
  b.init(rng);
  c.init(rng);
  a.bias = random_tensor({8}, 32, 0.1);
  b.bias = random_tensor({6}, 33, 0.1);
  std::vector<double> targets(6);
  for (int i = 0; i < 6; ++i) targets[i] = 0.1 * i;
  const auto loss = [&](bool backward) {
    const auto h1 = a.forward(x);
    const auto z1 = relu(h1);
    const auto h2 = b.forward(z1);
    const auto z2 = relu(h2);
    const auto out = c.forward(z2);
    auto res = mse_from_logits(out, std::span<const double>(targets));
    if (backward) {
      const auto dz2 = c.backward(z2, res.dlogits);
      const auto dz1 = b.backward(z1, relu_backward(h2, dz2));
      a.backward(x, relu_backward(h1, dz1), false);
    }
    return res.loss;
  };
  report = grad_check({{"a.w", &a.weight}, {"a.b", &a.bias}, {"b.w", &b.weight}, {"c.w", &c.weight}, {"c.b", &c.bias}},
                      [&] { return loss(false); }, [&] { loss(true); });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("losses from logits") {
  const Tensor<double> z({3}, std::vector<double>{-2.0, 0.0, 3.0});
  const std::vector<double> y{0.0, 0.5, 1.0};
  auto bce = bce_from_logits(z, std::span<const double>(y));
  auto zz = z;
  const auto report = grad_check(
      {{"z", &zz}}, [&] { return bce_from_logits(zz, std::span<const double>(y)).loss; },
      [&] {
        const auto r = bce_from_logits(zz, std::span<const double>(y));
        for (std::size_t i = 0; i < r.dlogits.size(); ++i) zz.grad()[i] += r.dlogits[i];
      },
      {.h = 1e-6});
  CHECK(report.max_rel_error < 1e-6);
  const double ref = (std::log1p(std::exp(-2.0)) + std::log(2.0) + std::log1p(std::exp(-3.0))) / 3.0;
  CHECK(bce.loss == doctest::Approx(ref).epsilon(1e-12));
  // Large logits stay finite.
  const Tensor<double> huge({2}, std::vector<double>{800.0, -800.0});
  const std::vector<double> t{0.0, 1.0};
  CHECK(bce_from_logits(huge, std::span<const double>(t)).loss == doctest::Approx(800.0));
  CHECK(mse_from_logits(z, std::span<const double>(y)).loss ==
        doctest::Approx((std::pow(1 / (1 + std::exp(2.0)), 2) + std::pow(1 - 1 / (1 + std::exp(-3.0)), 2)) / 3.0));
}

TEST_CASE("elementwise helpers") {
  const auto x = random_tensor({2, 3, 4, 4}, 40);
  const Tensor<double> zero(x.shape());
  const auto s = add(x, zero);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(s[i] == x[i]);
  CHECK(sigmoid(Tensor<double>({1}, 0.0))[0] == 0.5);
  CHECK_THROWS_AS(add(x, Tensor<double>({2, 3, 4, 5})), ShapeMismatch);

  const auto b = random_tensor({2, 2, 4, 4}, 41);
  const auto cat = concat(x, b);
  CHECK(cat.shape() == std::vector<int>{2, 5, 4, 4});
  CHECK(cat.at(1, 3, 2, 1) == b.at(1, 0, 2, 1));
  CHECK(cat.at(1, 2, 2, 1) == x.at(1, 2, 2, 1));
  const auto [da, db] = concat_backward(cat, 3);
  CHECK(da.data()[5] == x.data()[5]);
  CHECK(db.data()[7] == b.data()[7]);

  const auto p = avg_pool2(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 6}));
  CHECK(p[0] == 3.0);
}

TEST_CASE("point sampling: values and gradient") {
  Tensor<double> map({1, 2, 4, 5});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) map.at(0, c, y, x) = (c + 1) * (2.0 * x + 3.0 * y);
  const std::vector<MapCoord> coords{{1.5, 2.25}, {0, 0}, {-3, 1}, {10, 10}, {3.75, 0.5}};
  const auto s = sample_points(map, std::span<const MapCoord>(coords));
  REQUIRE(s.shape() == std::vector<int>{5, 2});
  // Bilinear reproduces affine functions exactly; out-of-range clamps to the border.
  CHECK(s[0] == doctest::Approx(2 * 1.5 + 3 * 2.25));
  CHECK(s[1] == doctest::Approx(2 * (2 * 1.5 + 3 * 2.25)));
  CHECK(s[2] == 0.0);
  CHECK(s[4] == doctest::Approx(3.0));
  CHECK(s[6] == doctest::Approx(2 * 4 + 3 * 3));
  CHECK(s[9] == doctest::Approx(2 * (2 * 3.75 + 3 * 0.5)));

  const auto r = random_tensor({5, 2}, 50);
  const auto report = grad_check(
      {{"map", &map}}, [&] { return dot_with(sample_points(map, std::span<const MapCoord>(coords)), r); },
      [&] {
        const auto d = sample_points_backward(r, std::span<const MapCoord>(coords), map.shape());
        for (std::size_t i = 0; i < d.size(); ++i) map.grad()[i] += d[i];
      });
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("adam") {
  Tensor<double> w({3}, std::vector<double>{1.0, -2.0, 0.5});
  AdamState<double> st;
  Tensor<double>* params[] = {&w};
  w.zero_grad();
  adam_step(std::span<Tensor<double>* const>(params), st, {});
  CHECK(w[0] == 1.0);
  CHECK(w[1] == -2.0);

  Tensor<double> q({1}, 1.0);
  AdamState<double> sq;
  Tensor<double>* qp[] = {&q};
  for (int i = 0; i < 200; ++i) {
    q.grad()[0] = 2 * q[0];
    adam_step(std::span<Tensor<double>* const>(qp), sq, {.lr = 0.1});
  }
  CHECK(std::abs(q[0]) < 1e-2);

  // Two identical runs are bitwise equal.
  const auto run = [] {
    Tensor<float> p({4}, std::vector<float>{0.3f, -0.2f, 0.9f, 0.0f});
    AdamState<float> s;
    Tensor<float>* pp[] = {&p};
    for (int i = 0; i < 50; ++i) {
      for (std::size_t k = 0; k < 4; ++k) p.grad()[k] = p[k] * p[k] - 0.1f;
      adam_step(std::span<Tensor<float>* const>(pp), s, {.lr = 0.01});
    }
    return std::vector<float>(p.data().begin(), p.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeMismatch);
  Tensor<float> t({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 6);
  CHECK(shape_string({2, 3, 4}) == "[2x3x4]");
}

}  // TEST_SUITE
