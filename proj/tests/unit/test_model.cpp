#include <doctest.h>

#include <filesystem>

#include "pifukit/maps.hpp"
#include "pifukit/model.hpp"
#include "pifukit/synthdata.hpp"

using namespace pifukit;

namespace {

ModelConfig small_config(int r_low, int parse_classes = 19) {
  ModelConfig c;
  c.r_low = r_low;
  c.r_high = 2 * r_low;
  c.c_feat = 8;
  c.backbone_width = 6;
  c.hri_width = 4;
  c.parse_classes = parse_classes;
  c.low_hidden = {16, 12, 8};
  c.high_hidden = {8, 6};
  return c;
}

template <typename T>
Tensor<T> random_like(std::vector<int> shape, std::uint64_t stream) {
  Tensor<T> t(std::move(shape));
  StreamRng rng(77, stream);
  for (auto& v : t.data()) v = static_cast<T>(2 * rng.uniform() - 1);
  return t;
}

struct SphereFixture {
  ModelConfig config;
  MapStack maps;
  TrainingView view;
};

SphereFixture sphere_fixture(int r_high, std::size_t n_samples, std::uint64_t seed) {
  SphereFixture f;
  const TriMesh sphere = icosphere(4, 1.0);
  f.maps = render_maps(sphere, Camera::with_default_scale(r_high));
  f.config = small_config(r_high / 2, f.maps.parse_classes);
  f.config.c_feat = 16;
  f.config.backbone_width = 16;
  f.config.low_hidden = {64, 32, 16};
  SamplerConfig sc;
  sc.n_total = n_samples;
  sc.seed = seed;
  f.view.samples = dos_samples(sphere, sc);
  f.view.input = Model<float>(f.config).prepare(f.maps);
  return f;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("resolution contract for R_low in {64, 128, 256}") {
  for (int r_low : {64, 128, 256}) {
    const Model<float> m(small_config(r_low));
    const auto low = m.encode_low(Tensor<float>({1, m.config().backbone_channels(), r_low, r_low}));
    CHECK(low.shape() == std::vector<int>{1, 8, r_low / 4, r_low / 4});
    const auto high = m.encode_high(Tensor<float>({1, 3, 2 * r_low, 2 * r_low}), low);
    CHECK(high.shape() == std::vector<int>{1, 8, r_low, r_low});
    CHECK(high.dim(2) == 4 * low.dim(2));
    CHECK(high.dim(2) * 2 == m.config().r_high);
  }
  const Model<float> m(small_config(32));
  CHECK_THROWS_AS(m.encode_low(Tensor<float>({1, m.config().backbone_channels(), 16, 16})), ShapeMismatch);
  CHECK_THROWS_AS(m.encode_high(Tensor<float>({1, 3, 64, 64}), Tensor<float>({1, 8, 4, 4})), ShapeMismatch);
  ModelConfig bad = small_config(32);
  bad.r_high = 48;
  CHECK_THROWS_AS(Model<float>{bad}, ConfigError);
}

TEST_CASE("toggling parse changes the backbone channels by K") {
  ModelConfig c = small_config(32, 19);
  const int with = c.backbone_channels();
  c.use_parse = false;
  CHECK(with - c.backbone_channels() == 19);
  CHECK(with == 3 + 1 + 19 + 1);
  CHECK(c.hri_channels() == 3);
  c.hri_use_depth = true;
  CHECK(c.hri_channels() == 4);
}

TEST_CASE("zero maps give finite features") {
  const Model<float> m(small_config(32));
  const auto low = m.encode_low(Tensor<float>({1, m.config().backbone_channels(), 32, 32}));
  const auto high = m.encode_high(Tensor<float>({1, 3, 64, 64}), low);
  for (float v : high.data()) CHECK(std::isfinite(v));
}

TEST_CASE("residual identity: zero conv3 and conv4 pass U through") {
  for (int r_low : {64, 128}) {
    Model<float> m(small_config(r_low));
    for (auto* c : {&m.hri.conv3, &m.hri.conv4}) {
      std::fill(c->weight.data().begin(), c->weight.data().end(), 0.0f);
      std::fill(c->bias.data().begin(), c->bias.data().end(), 0.0f);
    }
    const auto low = m.encode_low(random_like<float>({1, m.config().backbone_channels(), r_low, r_low}, 1));
    const auto out = m.encode_high(random_like<float>({1, 3, 2 * r_low, 2 * r_low}, 2), low);
    const auto U = bilinear_upsample(low, 4);
    REQUIRE(out.shape() == U.shape());
    bool identical = true;
    for (std::size_t i = 0; i < U.size(); ++i) identical = identical && out[i] == U[i];
    CHECK(identical);
  }
}

TEST_CASE("gradient reaches conv1") {
  const SphereFixture f = sphere_fixture(32, 400, 1);
  Model<float> m(f.config);
  std::vector<Vec3> pts;
  std::vector<float> y;
  for (const auto& s : f.view.samples) {
    pts.push_back(s.point);
    y.push_back(static_cast<float>(s.label));
  }
  m.step(f.view.input, pts, std::span<const float>(y), LossKind::Mse, TrainStage::Hri);
  double norm2 = 0;
  for (float g : m.hri.conv1.weight.grad()) norm2 += static_cast<double>(g) * g;
  CHECK(norm2 > 0);
  // Stage hri leaves the backbone untouched.
  CHECK_FALSE(m.backbone.conv_a.weight.has_grad());
}

TEST_CASE("full HRI graph gradient check") {
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
    c.seed = 3;
    Model<double> m(c);
    ViewInput<double> view;
    view.camera = Camera::with_default_scale(32);
    view.low = random_like<double>({1, c.backbone_channels(), 16, 16}, 10);
    view.high = random_like<double>({1, c.hri_channels(), 32, 32}, 11);
    std::vector<Vec3> pts;
    std::vector<double> y;
    StreamRng rng(5, 5);
    for (int i = 0; i < 40; ++i) {
      pts.push_back({1.8 * rng.uniform() - 0.9, 1.8 * rng.uniform() - 0.9, 1.8 * rng.uniform() - 0.9});
      y.push_back(rng.uniform());
    }
    std::vector<NamedTensor> tensors;
    for (auto& p : m.all_parameters()) tensors.push_back({p.name, p.tensor});
    GradCheckOptions opt;
    opt.h = 1e-6;
    opt.max_coords_per_tensor = 64;
    const auto report = grad_check(
        tensors, [&] { return m.loss(view, pts, std::span<const double>(y), LossKind::Mse, TrainStage::Hri); },
        [&] { m.step(view, pts, std::span<const double>(y), LossKind::Mse, TrainStage::Hri, true); }, opt);
    INFO(to_string(fusion), " worst ", report.worst_tensor, " ", report.worst_analytic, " vs ", report.worst_numeric);
    CHECK(report.max_rel_error < 1e-3);

    const auto low_report = grad_check(
        tensors,
        [&] { return m.loss(view, pts, std::span<const double>(y), LossKind::Bce, TrainStage::Backbone); },
        [&] { m.step(view, pts, std::span<const double>(y), LossKind::Bce, TrainStage::Backbone); }, opt);
    CHECK(low_report.max_rel_error < 1e-3);
  }
}

TEST_CASE("query is pure, order preserving and batch invariant") {
  const SphereFixture f = sphere_fixture(32, 10, 1);
  const Model<float> m(f.config);
  const auto feats = m.encode(f.view.input, QueryMode::Full);
  std::vector<Vec3> pts;
  StreamRng rng(2, 2);
  for (int i = 0; i < 9000; ++i) pts.push_back({2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1});
  pts.push_back(pts[17]);
  for (QueryMode mode : {QueryMode::LowOnly, QueryMode::Full}) {
    const auto all = m.query(feats, pts, mode);
    CHECK(all.back() == all[17]);
    for (double v : all) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    const auto head = m.query(feats, std::span<const Vec3>(pts).subspan(0, 5000), mode);
    const auto tail = m.query(feats, std::span<const Vec3>(pts).subspan(5000), mode);
    double drift = 0;
    for (std::size_t i = 0; i < head.size(); ++i) drift = std::max(drift, std::abs(head[i] - all[i]));
    for (std::size_t i = 0; i < tail.size(); ++i) drift = std::max(drift, std::abs(tail[i] - all[5000 + i]));
    CHECK(drift <= 1e-6);
  }
  const std::vector<Vec3> outside{{1.2, 0, 0}};
  CHECK_THROWS_AS(m.query(feats, outside, QueryMode::LowOnly), OutOfFrustum);
  const auto low_only = m.encode(f.view.input, QueryMode::LowOnly);
  CHECK_THROWS_AS(m.query(low_only, pts, QueryMode::Full), PreconditionError);
}

TEST_CASE("map coordinates hit feature pixel centers") {
  // High-res pixel u = 2p + 0.5 sits on HRI pixel p; u = 8q + 3.5 on backbone pixel q.
  CHECK(high_map_coord(2 * 5 + 0.5, 2 * 7 + 0.5).x == 5.0);
  CHECK(high_map_coord(2 * 5 + 0.5, 2 * 7 + 0.5).y == 7.0);
  CHECK(low_map_coord(8 * 3 + 3.5, 3.5).x == 3.0);
  const auto map = random_like<float>({1, 4, 6, 6}, 3);
  const std::vector<MapCoord> at{high_map_coord(2 * 4 + 0.5, 2 * 1 + 0.5)};
  const auto s = sample_points(map, std::span<const MapCoord>(at));
  for (int c = 0; c < 4; ++c) CHECK(s[c] == map.at(0, c, 1, 4));
}

TEST_CASE("training: sphere overfit, monotone ray, determinism, checkpoints") {
  const SphereFixture f = sphere_fixture(128, 5000, 7);
  TrainConfig tc;
  tc.epochs = 200;
  tc.lr = 2e-3;
  tc.batch_size = 500;
  tc.seed = 11;
  const auto run = [&] {
    Model<float> m(f.config);
    const auto curve = train(m, std::span<const TrainingView>(&f.view, 1), tc);
    return std::pair{std::move(m), curve};
  };
  auto [model, curve] = run();
  REQUIRE(curve.epoch_loss.size() == 200);
  INFO("final MSE ", curve.epoch_loss.back());
  CHECK(curve.epoch_loss.back() < 0.01);
  CHECK(model.backbone_trained);

  const auto feats = model.encode(f.view.input, QueryMode::LowOnly);
  std::vector<Vec3> ray;
  for (int i = 0; i < 16; ++i) ray.push_back({0, 0, 1.5 * i / 15.0});
  const auto pred = model.query(feats, ray, QueryMode::LowOnly);
  CHECK(pred.front() > 0.5);
  CHECK(pred.back() < 0.5);
  // Rises below float resolution in the saturated interior are not inversions.
  int inversions = 0;
  for (std::size_t i = 1; i < pred.size(); ++i) inversions += pred[i] > pred[i - 1] + 1e-6;
  CHECK(inversions <= 1);

  namespace fs = std::filesystem;
  const fs::path a = fs::temp_directory_path() / "pifukit_unit_ckpt_a";
  const fs::path b = fs::temp_directory_path() / "pifukit_unit_ckpt_b";
  fs::remove_all(a);
  fs::remove_all(b);
  save_checkpoint(a, model);
  auto [again, curve2] = run();
  save_checkpoint(b, again);
  CHECK(curve2.epoch_loss == curve.epoch_loss);
  for (const auto& e : fs::directory_iterator(a)) CHECK(read_file(e.path()) == read_file(b / e.path().filename()));

  const Model<float> loaded = load_checkpoint(a);
  CHECK(loaded.backbone_trained);
  CHECK_FALSE(loaded.hri_trained);
  const auto again_pred = loaded.query(loaded.encode(f.view.input, QueryMode::LowOnly), ray, QueryMode::LowOnly);
  CHECK(again_pred == pred);

  save_loss_curve(a / "loss.json", curve);
  CHECK(fs::file_size(a / "loss.json") > 20);
}

TEST_CASE("training preconditions and divergence") {
  SphereFixture f = sphere_fixture(32, 200, 2);
  Model<float> m(f.config);
  TrainConfig tc;
  tc.stage = TrainStage::Hri;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(m, std::span<const TrainingView>(&f.view, 1), tc), PreconditionError);
  CHECK_THROWS_AS(load_checkpoint(std::filesystem::temp_directory_path() / "pifukit_no_such_ckpt"), PreconditionError);

  f.view.samples[3].label = std::nan("");
  tc.stage = TrainStage::Backbone;
  CHECK_THROWS_AS(train(m, std::span<const TrainingView>(&f.view, 1), tc), DivergenceDetected);
}

}  // TEST_SUITE
