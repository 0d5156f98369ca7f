#include "pifukit/model.hpp"

#include <map>
#include <numeric>
#include <random>
#include <type_traits>

#include "pifukit/json_io.hpp"

namespace pifukit {

std::string to_string(Fusion f) { return f == Fusion::Hri ? "hri" : "late_fusion"; }
std::string to_string(QueryMode m) { return m == QueryMode::LowOnly ? "low_only" : "full"; }
std::string to_string(TrainStage s) { return s == TrainStage::Backbone ? "backbone" : "hri"; }
std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "bce"; }

Fusion parse_fusion(const std::string& s) {
  if (s == "hri") return Fusion::Hri;
  if (s == "late_fusion") return Fusion::LateFusion;
  throw ConfigError("unknown fusion '" + s + "' (expected hri or late_fusion)");
}
QueryMode parse_query_mode(const std::string& s) {
  if (s == "low_only") return QueryMode::LowOnly;
  if (s == "full") return QueryMode::Full;
  throw ConfigError("unknown query mode '" + s + "' (expected low_only or full)");
}
TrainStage parse_stage(const std::string& s) {
  if (s == "backbone") return TrainStage::Backbone;
  if (s == "hri") return TrainStage::Hri;
  throw ConfigError("unknown stage '" + s + "' (expected backbone or hri)");
}
LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "bce") return LossKind::Bce;
  throw ConfigError("unknown loss '" + s + "' (expected mse or bce)");
}

void ModelConfig::validate() const {
  if (r_low < 8 || r_low % 4 != 0) throw ConfigError("r_low must be a positive multiple of 4, got " + std::to_string(r_low));
  if (r_high != 2 * r_low)
    throw ConfigError("r_high must equal 2 * r_low (" + std::to_string(r_high) + " vs " + std::to_string(r_low) + ")");
  if (c_feat <= 0 || backbone_width <= 0 || hri_width <= 0) throw ConfigError("channel widths must be positive");
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("kernel must be odd");
  if ((use_parse || hri_use_parse) && parse_classes < 1) throw ConfigError("parse_classes must be >= 1");
  if (low_hidden.empty() || high_hidden.empty()) throw ConfigError("decoders need at least one hidden layer");
  for (int w : low_hidden)
    if (w <= 0) throw ConfigError("decoder widths must be positive");
  for (int w : high_hidden)
    if (w <= 0) throw ConfigError("decoder widths must be positive");
  if (tap_index < 0 || tap_index >= static_cast<int>(low_hidden.size()))
    throw ConfigError("tap_index out of range of low_hidden");
}

int ModelConfig::backbone_channels() const {
  return 3 + (use_depth ? 1 : 0) + (use_parse ? parse_classes : 0) + (use_mask ? 1 : 0);
}

int ModelConfig::hri_channels() const { return 3 + (hri_use_depth ? 1 : 0) + (hri_use_parse ? parse_classes : 0); }

bool in_frustum(const Camera& camera, const Vec3& camera_point) {
  const Projection pr = project_camera_space(camera, camera_point);
  const double lo = -1.5, hi = camera.resolution + 0.5;
  return pr.u >= lo && pr.u <= hi && pr.v >= lo && pr.v <= hi;
}

MapCoord low_map_coord(double u, double v) { return {(u - 3.5) / 8.0, (v - 3.5) / 8.0}; }
MapCoord high_map_coord(double u, double v) { return {(u - 0.5) / 2.0, (v - 0.5) / 2.0}; }

namespace {

template <typename T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("gradient accumulation " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// --- backbone ---

template <typename T>
struct BackboneCache {
  Tensor<T> x, a_pre, a, b_pre, b, r1a_pre, r1a, r1_pre, r1, r2a_pre, r2a;
};

template <typename T>
Tensor<T> backbone_forward(const typename Model<T>::Backbone& bb, const Tensor<T>& x, BackboneCache<T>* cache) {
  Tensor<T> a_pre = bb.conv_a.forward(x);
  Tensor<T> a = relu(a_pre);
  Tensor<T> b_pre = bb.conv_b.forward(a);
  Tensor<T> b = relu(b_pre);
  Tensor<T> r1a_pre = bb.res1a.forward(b);
  Tensor<T> r1a = relu(r1a_pre);
  Tensor<T> r1_pre = add(b, bb.res1b.forward(r1a));
  Tensor<T> r1 = relu(r1_pre);
  Tensor<T> r2a_pre = bb.res2a.forward(r1);
  Tensor<T> r2a = relu(r2a_pre);
  Tensor<T> out = add(r1, bb.res2b.forward(r2a));
  if (cache)
    *cache = {x, std::move(a_pre), std::move(a), std::move(b_pre), std::move(b), std::move(r1a_pre),
              std::move(r1a), std::move(r1_pre), std::move(r1), std::move(r2a_pre), std::move(r2a)};
  return out;
}

template <typename T>
void backbone_backward(typename Model<T>::Backbone& bb, const BackboneCache<T>& c, const Tensor<T>& d_out) {
  Tensor<T> d_r1 = d_out;
  const Tensor<T> d_r2a = bb.res2b.backward(c.r2a, d_out);
  add_into(d_r1, bb.res2a.backward(c.r1, relu_backward(c.r2a_pre, d_r2a)));
  const Tensor<T> d_r1_pre = relu_backward(c.r1_pre, d_r1);
  Tensor<T> d_b = d_r1_pre;
  const Tensor<T> d_r1a = bb.res1b.backward(c.r1a, d_r1_pre);
  add_into(d_b, bb.res1a.backward(c.b, relu_backward(c.r1a_pre, d_r1a)));
  const Tensor<T> d_a = bb.conv_b.backward(c.a, relu_backward(c.b_pre, d_b));
  bb.conv_a.backward(c.x, relu_backward(c.a_pre, d_a), false);
}

// --- HRI ---

template <typename T>
struct HriCache {
  Tensor<T> h, f1_pre, f1, f2_pre, in3, c3_pre, c3;
  std::vector<int> low_shape;
  int f_channels = 0;
};

template <typename T>
Tensor<T> hri_forward(const typename Model<T>::Hri& m, Fusion fusion, const Tensor<T>& h, const Tensor<T>& low,
                      HriCache<T>* cache) {
  Tensor<T> f1_pre = m.conv1.forward(h);
  Tensor<T> f1 = relu(f1_pre);
  Tensor<T> f2_pre = m.conv2.forward(f1);
  Tensor<T> F = relu(f2_pre);
  Tensor<T> U;
  Tensor<T> in3;
  if (fusion == Fusion::Hri) {
    U = bilinear_upsample(low, 4);
    if (U.shape() != F.shape())
      throw ShapeMismatch("upsampled backbone features " + shape_string(U.shape()) + " do not match F " +
                          shape_string(F.shape()));
    in3 = concat(F, U);
  } else {
    in3 = F;
  }
  Tensor<T> c3_pre = m.conv3.forward(in3);
  Tensor<T> c3 = relu(c3_pre);
  Tensor<T> out = m.conv4.forward(c3);
  if (fusion == Fusion::Hri) out = add(out, U);
  if (cache)
    *cache = {h, std::move(f1_pre), std::move(f1), std::move(f2_pre), std::move(in3), std::move(c3_pre),
              std::move(c3), low.shape(), F.dim(1)};
  return out;
}

// Returns the gradient with respect to the backbone features (empty for late fusion).
template <typename T>
Tensor<T> hri_backward(typename Model<T>::Hri& m, Fusion fusion, const HriCache<T>& c, const Tensor<T>& d_out) {
  const Tensor<T> d_c3 = m.conv4.backward(c.c3, d_out);
  const Tensor<T> d_in3 = m.conv3.backward(c.in3, relu_backward(c.c3_pre, d_c3));
  Tensor<T> d_F, d_U;
  if (fusion == Fusion::Hri) {
    auto [dF, dU] = concat_backward(d_in3, c.f_channels);
    d_F = std::move(dF);
    d_U = std::move(dU);
    add_into(d_U, d_out);
  } else {
    d_F = d_in3;
  }
  const Tensor<T> d_f1 = m.conv2.backward(c.f1, relu_backward(c.f2_pre, d_F));
  m.conv1.backward(c.h, relu_backward(c.f1_pre, d_f1), false);
  if (fusion != Fusion::Hri) return {};
  return bilinear_upsample_backward(d_U, c.low_shape, 4);
}

// --- decoders ---

template <typename T>
struct MlpCache {
  std::vector<Tensor<T>> in, pre;  // per layer
  Tensor<T> logits;
};

// Hidden layers use relu; the last layer emits one logit per row.
template <typename T>
Tensor<T> mlp_forward(const std::vector<Linear<T>>& layers, const Tensor<T>& x, MlpCache<T>& cache, int tap_index,
                      std::type_identity_t<Tensor<T>>* tap) {
  cache.in.assign(layers.size(), {});
  cache.pre.assign(layers.size(), {});
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cache.in[i] = std::move(h);
    Tensor<T> pre = layers[i].forward(cache.in[i]);
    if (i + 1 == layers.size()) {
      cache.logits = pre;
      break;
    }
    h = relu(pre);
    if (tap && static_cast<int>(i) == tap_index) *tap = h;
    cache.pre[i] = std::move(pre);
  }
  return cache.logits;
}

// Backpropagates d_logits (plus an optional tap gradient) and returns d_input when requested.
template <typename T>
Tensor<T> mlp_backward(std::vector<Linear<T>>& layers, const MlpCache<T>& cache, const Tensor<T>& d_logits,
                       int tap_index, const std::type_identity_t<Tensor<T>>* d_tap, bool need_dx) {
  Tensor<T> d = d_logits;
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (k + 1 < layers.size()) {
      if (d_tap && static_cast<int>(k) == tap_index) add_into(d, *d_tap);
      d = relu_backward(cache.pre[k], d);
    }
    d = layers[k].backward(cache.in[k], d, k > 0 || need_dx);
  }
  return d;
}

template <typename T>
void init_conv(Conv2D<T>& c, std::uint64_t seed, std::uint64_t& stream) {
  StreamRng rng(seed, stream++);
  c.init(rng);
}

template <typename T>
void init_linear(Linear<T>& l, std::uint64_t seed, std::uint64_t& stream) {
  StreamRng rng(seed, stream++);
  l.init(rng);
}

// Pixel-space projection of camera-space points, checked against the frustum.
struct Projected {
  std::vector<MapCoord> low, high;
  std::vector<double> z;
};

Projected project_points(const Camera& cam, std::span<const Vec3> points) {
  Projected p;
  p.low.resize(points.size());
  p.high.resize(points.size());
  p.z.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Projection pr = project_camera_space(cam, points[i]);
    if (!in_frustum(cam, points[i]))
      throw OutOfFrustum("point " + std::to_string(i) + " projects to (" + std::to_string(pr.u) + ", " +
                         std::to_string(pr.v) + ")");
    p.low[i] = low_map_coord(pr.u, pr.v);
    p.high[i] = high_map_coord(pr.u, pr.v);
    p.z[i] = pr.z_cam;
  }
  return p;
}

template <typename T>
Tensor<T> column(std::span<const double> z) {
  Tensor<T> t({static_cast<int>(z.size()), 1});
  for (std::size_t i = 0; i < z.size(); ++i) t[i] = static_cast<T>(z[i]);
  return t;
}

template <typename T>
LossResult<T> score(const Tensor<T>& logits, std::span<const T> targets, LossKind kind) {
  return kind == LossKind::Mse ? mse_from_logits(logits, targets) : bce_from_logits(logits, targets);
}

}  // namespace

// --- Model ------------------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int k = config_.kernel, C = config_.c_feat;
  backbone.conv_a = Conv2D<T>(config_.backbone_channels(), config_.backbone_width, k, 2);
  backbone.conv_b = Conv2D<T>(config_.backbone_width, C, k, 2);
  backbone.res1a = Conv2D<T>(C, C, k, 1);
  backbone.res1b = Conv2D<T>(C, C, k, 1);
  backbone.res2a = Conv2D<T>(C, C, k, 1);
  backbone.res2b = Conv2D<T>(C, C, k, 1);

  int in = C + 1;
  for (int w : config_.low_hidden) {
    low_decoder.emplace_back(in, w);
    in = w;
  }
  low_decoder.emplace_back(in, 1);

  hri.conv1 = Conv2D<T>(config_.hri_channels(), config_.hri_width, k, 2);
  hri.conv2 = Conv2D<T>(config_.hri_width, C, k, 1);
  hri.conv3 = Conv2D<T>(config_.fusion == Fusion::Hri ? 2 * C : C, C, k, 1);
  hri.conv4 = Conv2D<T>(C, C, k, 1);

  in = C + config_.tap_width();
  for (int w : config_.high_hidden) {
    high_decoder.emplace_back(in, w);
    in = w;
  }
  high_decoder.emplace_back(in, 1);
  init();
}

template <typename T>
void Model<T>::init() {
  const std::uint64_t seed = salted(config_.seed, StreamSalt::Init);
  std::uint64_t stream = 0;
  for (auto* c : {&backbone.conv_a, &backbone.conv_b, &backbone.res1a, &backbone.res1b, &backbone.res2a,
                  &backbone.res2b})
    init_conv(*c, seed, stream);
  for (auto& l : low_decoder) init_linear(l, seed, stream);
  for (auto* c : {&hri.conv1, &hri.conv2, &hri.conv3, &hri.conv4}) init_conv(*c, seed, stream);
  for (auto& l : high_decoder) init_linear(l, seed, stream);
  backbone_trained = hri_trained = false;
}

template <typename T>
ViewInput<T> Model<T>::prepare(const MapStack& maps) const {
  const int R = config_.r_high;
  if (maps.resolution() != R)
    throw ShapeMismatch("maps are " + std::to_string(maps.resolution()) + " px, model expects r_high = " +
                        std::to_string(R));
  if ((config_.use_parse || config_.hri_use_parse) && maps.parse_classes != config_.parse_classes)
    throw ShapeMismatch("maps carry " + std::to_string(maps.parse_classes) + " parse classes, model expects " +
                        std::to_string(config_.parse_classes));
  const std::size_t plane = static_cast<std::size_t>(R) * R;
  const auto fill = [&](Tensor<T>& t, int& ch, const Map2D& m) {
    for (int c = 0; c < m.channels; ++c, ++ch) {
      T* dst = t.ptr() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = static_cast<T>(m.data[p * m.channels + c]);
    }
  };
  ViewInput<T> v;
  v.camera = maps.camera;
  Tensor<T> full({1, config_.backbone_channels(), R, R});
  int ch = 0;
  fill(full, ch, maps.normal);
  if (config_.use_depth) fill(full, ch, maps.rel_depth);
  if (config_.use_parse) fill(full, ch, maps.parse);
  if (config_.use_mask) fill(full, ch, maps.mask);
  v.low = avg_pool2(full);

  v.high = Tensor<T>({1, config_.hri_channels(), R, R});
  ch = 0;
  fill(v.high, ch, maps.normal);
  if (config_.hri_use_depth) fill(v.high, ch, maps.rel_depth);
  if (config_.hri_use_parse) fill(v.high, ch, maps.parse);
  return v;
}

template <typename T>
Tensor<T> Model<T>::encode_low(const Tensor<T>& low_input) const {
  const int R = config_.r_low;
  if (low_input.rank() != 4 || low_input.dim(0) != 1 || low_input.dim(1) != config_.backbone_channels() ||
      low_input.dim(2) != R || low_input.dim(3) != R)
    throw ShapeMismatch("backbone input " + shape_string(low_input.shape()) + ", expected " +
                        shape_string({1, config_.backbone_channels(), R, R}));
  return backbone_forward<T>(backbone, low_input, nullptr);
}

template <typename T>
Tensor<T> Model<T>::encode_high(const Tensor<T>& high_input, const Tensor<T>& low_features) const {
  const int R = config_.r_high;
  if (high_input.rank() != 4 || high_input.dim(0) != 1 || high_input.dim(1) != config_.hri_channels() ||
      high_input.dim(2) != R || high_input.dim(3) != R)
    throw ShapeMismatch("HRI input " + shape_string(high_input.shape()) + ", expected " +
                        shape_string({1, config_.hri_channels(), R, R}));
  const std::vector<int> low_shape{1, config_.c_feat, config_.r_low / 4, config_.r_low / 4};
  if (low_features.shape() != low_shape)
    throw ShapeMismatch("backbone features " + shape_string(low_features.shape()) + ", expected " +
                        shape_string(low_shape));
  return hri_forward<T>(hri, config_.fusion, high_input, low_features, nullptr);
}

template <typename T>
ViewFeatures<T> Model<T>::encode(const ViewInput<T>& view, QueryMode mode) const {
  ViewFeatures<T> f;
  f.camera = view.camera;
  f.low = encode_low(view.low);
  if (mode == QueryMode::Full) f.hri = encode_high(view.high, f.low);
  return f;
}

template <typename T>
std::vector<double> Model<T>::query_camera_space(const ViewFeatures<T>& features, std::span<const Vec3> points,
                                                 QueryMode mode) const {
  if (mode == QueryMode::Full && features.hri.empty())
    throw PreconditionError("full query needs features encoded in full mode");
  const Projected proj = project_points(features.camera, points);
  std::vector<double> out(points.size());
  constexpr std::size_t kChunk = 4096;
  const std::size_t n_chunks = (points.size() + kChunk - 1) / kChunk;
  parallel_for(n_chunks, 1, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      const std::size_t b = c * kChunk, n = std::min(kChunk, points.size() - b);
      const Tensor<T> f_low = sample_points(features.low, std::span<const MapCoord>(proj.low).subspan(b, n));
      MlpCache<T> low_cache;
      Tensor<T> tap;
      Tensor<T> logits = mlp_forward(low_decoder, concat(f_low, column<T>(std::span(proj.z).subspan(b, n))),
                                     low_cache, config_.tap_index, &tap);
      if (mode == QueryMode::Full) {
        const Tensor<T> f_high = sample_points(features.hri, std::span<const MapCoord>(proj.high).subspan(b, n));
        MlpCache<T> high_cache;
        logits = mlp_forward(high_decoder, concat(f_high, tap), high_cache, -1, nullptr);
      }
      for (std::size_t i = 0; i < n; ++i) out[b + i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    }
  });
  return out;
}

template <typename T>
std::vector<double> Model<T>::query(const ViewFeatures<T>& features, std::span<const Vec3> points,
                                    QueryMode mode) const {
  const Mat3 R = features.camera.world_to_camera();
  std::vector<Vec3> cam(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) cam[i] = R * points[i];
  return query_camera_space(features, cam, mode);
}

namespace {

// Shared forward/backward of one training batch. `cached_low` skips the
// backbone (frozen, already encoded).
template <typename T>
double batch_loss(Model<T>& m, const ViewInput<T>& view, const std::type_identity_t<Tensor<T>>* cached_low,
                  std::span<const Vec3> points, std::span<const std::type_identity_t<T>> targets, LossKind kind, TrainStage stage, bool backward, bool through_backbone) {
  if (points.size() != targets.size() || points.empty())
    throw ShapeMismatch("batch has " + std::to_string(points.size()) + " points and " +
                        std::to_string(targets.size()) + " targets");
  const ModelConfig& cfg = m.config();
  const bool grad_backbone = backward && (stage == TrainStage::Backbone || through_backbone);

  BackboneCache<T> bb_cache;
  Tensor<T> low;
  if (cached_low && !grad_backbone) {
    low = *cached_low;
  } else {
    low = grad_backbone ? backbone_forward<T>(m.backbone, view.low, &bb_cache) : m.encode_low(view.low);
  }

  const Projected proj = project_points(view.camera, points);
  const Tensor<T> f_low = sample_points(low, std::span<const MapCoord>(proj.low));
  MlpCache<T> low_cache;
  Tensor<T> tap;
  const Tensor<T> low_logits =
      mlp_forward(m.low_decoder, concat(f_low, column<T>(proj.z)), low_cache, cfg.tap_index, &tap);

  if (stage == TrainStage::Backbone) {
    LossResult<T> r = score(low_logits, targets, kind);
    if (backward) {
      const Tensor<T> dx = mlp_backward(m.low_decoder, low_cache, r.dlogits, -1, nullptr, true);
      auto [d_feat, d_z] = concat_backward(dx, cfg.c_feat);
      backbone_backward<T>(m.backbone, bb_cache,
                           sample_points_backward(d_feat, std::span<const MapCoord>(proj.low), low.shape()));
    }
    return r.loss;
  }

  HriCache<T> hri_cache;
  const Tensor<T> hri_out = hri_forward<T>(m.hri, cfg.fusion, view.high, low, backward ? &hri_cache : nullptr);
  const Tensor<T> f_high = sample_points(hri_out, std::span<const MapCoord>(proj.high));
  MlpCache<T> high_cache;
  const Tensor<T> logits = mlp_forward(m.high_decoder, concat(f_high, tap), high_cache, -1, nullptr);
  LossResult<T> r = score(logits, targets, kind);
  if (!backward) return r.loss;

  const Tensor<T> dx = mlp_backward(m.high_decoder, high_cache, r.dlogits, -1, nullptr, true);
  auto [d_fh, d_tap] = concat_backward(dx, cfg.c_feat);
  Tensor<T> d_low = hri_backward<T>(m.hri, cfg.fusion, hri_cache,
                                    sample_points_backward(d_fh, std::span<const MapCoord>(proj.high), hri_out.shape()));
  if (!through_backbone) return r.loss;

  const Tensor<T> zero_logits(low_logits.shape());
  const Tensor<T> dxl = mlp_backward(m.low_decoder, low_cache, zero_logits, cfg.tap_index, &d_tap, true);
  auto [d_fl, d_z] = concat_backward(dxl, cfg.c_feat);
  Tensor<T> d_low_total = sample_points_backward(d_fl, std::span<const MapCoord>(proj.low), low.shape());
  if (!d_low.empty()) add_into(d_low_total, d_low);
  backbone_backward<T>(m.backbone, bb_cache, d_low_total);
  return r.loss;
}

}  // namespace

template <typename T>
double Model<T>::loss(const ViewInput<T>& view, std::span<const Vec3> points, std::span<const T> targets,
                      LossKind kind, TrainStage stage) const {
  return batch_loss(const_cast<Model<T>&>(*this), view, nullptr, points, targets, kind, stage, false, false);
}

template <typename T>
double Model<T>::step(const ViewInput<T>& view, std::span<const Vec3> points, std::span<const T> targets,
                      LossKind kind, TrainStage stage, bool through_backbone) {
  return batch_loss(*this, view, nullptr, points, targets, kind, stage, true, through_backbone);
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::parameters(TrainStage stage) {
  std::vector<NamedParam<T>> out;
  const auto conv = [&](const std::string& name, Conv2D<T>& c) {
    out.push_back({name + ".weight", &c.weight});
    out.push_back({name + ".bias", &c.bias});
  };
  const auto mlp = [&](const std::string& name, std::vector<Linear<T>>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.push_back({name + "." + std::to_string(i) + ".weight", &layers[i].weight});
      out.push_back({name + "." + std::to_string(i) + ".bias", &layers[i].bias});
    }
  };
  if (stage == TrainStage::Backbone) {
    conv("backbone.conv_a", backbone.conv_a);
    conv("backbone.conv_b", backbone.conv_b);
    conv("backbone.res1a", backbone.res1a);
    conv("backbone.res1b", backbone.res1b);
    conv("backbone.res2a", backbone.res2a);
    conv("backbone.res2b", backbone.res2b);
    mlp("low_decoder", low_decoder);
  } else {
    conv("hri.conv1", hri.conv1);
    conv("hri.conv2", hri.conv2);
    conv("hri.conv3", hri.conv3);
    conv("hri.conv4", hri.conv4);
    mlp("high_decoder", high_decoder);
  }
  return out;
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::all_parameters() {
  auto out = parameters(TrainStage::Backbone);
  auto h = parameters(TrainStage::Hri);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

template class Model<float>;
template class Model<double>;

// --- training --------------------------------------------------------------------------

LossCurve train(Model<float>& model, std::span<const TrainingView> views, const TrainConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0))
    throw ConfigError("train needs epochs >= 0, batch_size >= 1 and lr > 0");
  if (views.empty()) throw ConfigError("train needs at least one view");
  if (config.stage == TrainStage::Hri && !model.backbone_trained)
    throw PreconditionError("stage hri requires a trained backbone checkpoint");

  LossCurve curve;
  curve.stage = config.stage;
  curve.loss = config.loss;

  // Frozen backbone features are computed once per view.
  std::vector<Tensor<float>> cached_low;
  if (config.stage == TrainStage::Hri)
    for (const auto& v : views) cached_low.push_back(model.encode_low(v.input.low));

  auto named = model.parameters(config.stage);
  std::vector<Tensor<float>*> params;
  for (auto& p : named) params.push_back(p.tensor);
  AdamState<float> adam;
  const AdamConfig adam_cfg{.lr = config.lr};
  const std::uint64_t shuffle_seed = salted(config.seed, StreamSalt::Shuffle);

  std::vector<Vec3> pts;
  std::vector<float> tgt;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    StreamRng rng(shuffle_seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::vector<std::uint32_t>> order(views.size());
    std::vector<std::pair<std::uint32_t, std::uint32_t>> batches;
    for (std::size_t v = 0; v < views.size(); ++v) {
      auto& o = order[v];
      o.resize(views[v].samples.size());
      std::iota(o.begin(), o.end(), 0u);
      std::shuffle(o.begin(), o.end(), rng);
      if (config.max_samples_per_view > 0 && o.size() > static_cast<std::size_t>(config.max_samples_per_view))
        o.resize(static_cast<std::size_t>(config.max_samples_per_view));
      const std::size_t nb = (o.size() + config.batch_size - 1) / config.batch_size;
      for (std::size_t b = 0; b < nb; ++b)
        batches.emplace_back(static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(b));
    }
    std::shuffle(batches.begin(), batches.end(), rng);

    double total = 0;
    std::size_t count = 0;
    for (const auto& [v, b] : batches) {
      const auto& o = order[v];
      const std::size_t begin = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t end = std::min(o.size(), begin + config.batch_size);
      pts.clear();
      tgt.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = views[v].samples[o[i]];
        pts.push_back(s.point);
        tgt.push_back(static_cast<float>(s.label));
      }
      for (auto* p : params) p->zero_grad();
      const double l = batch_loss(model, views[v].input, cached_low.empty() ? nullptr : &cached_low[v], pts,
                                  std::span<const float>(tgt), config.loss, config.stage, true, false);
      if (!std::isfinite(l))
        throw DivergenceDetected("non-finite loss at step " + std::to_string(curve.steps) + " (epoch " +
                                 std::to_string(epoch) + ")");
      adam_step(std::span<Tensor<float>* const>(params), adam, adam_cfg);
      ++curve.steps;
      total += l * static_cast<double>(end - begin);
      count += end - begin;
    }
    curve.epoch_loss.push_back(count ? total / static_cast<double>(count) : 0.0);
  }
  if (config.stage == TrainStage::Backbone)
    model.backbone_trained = true;
  else
    model.hri_trained = true;
  return curve;
}

void save_loss_curve(const std::filesystem::path& path, const LossCurve& curve) {
  nlohmann::json j{{"stage", to_string(curve.stage)},
                   {"loss", to_string(curve.loss)},
                   {"steps", curve.steps},
                   {"epoch_loss", curve.epoch_loss}};
  write_file(path, j.dump(2) + "\n");
}

// --- checkpoints -----------------------------------------------------------------------

namespace {

std::string tensor_file(const std::string& name) {
  std::string f = name;
  std::replace(f.begin(), f.end(), '.', '_');
  return f + ".f32m";
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model) {
  std::filesystem::create_directories(dir);
  auto& m = const_cast<Model<float>&>(model);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : m.all_parameters()) {
    Map2D map(static_cast<int>(p.tensor->size()), 1, 1);
    std::copy(p.tensor->data().begin(), p.tensor->data().end(), map.data.begin());
    const std::string file = tensor_file(p.name);
    write_f32map(dir / file, map);
    tensors.push_back({{"name", p.name}, {"file", file}, {"shape", p.tensor->shape()}});
  }
  nlohmann::json j{{"format", "pifukit-checkpoint"},
                   {"version", 1},
                   {"code_version", version_string()},
                   {"config", model.config()},
                   {"backbone_trained", model.backbone_trained},
                   {"hri_trained", model.hri_trained},
                   {"tensors", tensors}};
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

Model<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw PreconditionError("no checkpoint manifest at " + path.string());
  const nlohmann::json j = parse_json(read_file(path), path.string());
  if (j.value("format", "") != "pifukit-checkpoint") throw ParseError(path.string() + " is not a checkpoint manifest");
  Model<float> model(j.at("config").get<ModelConfig>());
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& p : model.all_parameters()) by_name[p.name] = p.tensor;
  for (const auto& t : j.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint tensor '" + name + "' is not part of the model");
    const auto shape = t.at("shape").get<std::vector<int>>();
    if (shape != it->second->shape())
      throw ShapeMismatch("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                          shape_string(it->second->shape()));
    const Map2D map = read_f32map(dir / t.at("file").get<std::string>());
    if (map.data.size() != it->second->size()) throw ParseError("checkpoint tensor '" + name + "' is truncated");
    std::copy(map.data.begin(), map.data.end(), it->second->data().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ParseError("checkpoint is missing tensor '" + by_name.begin()->first + "'");
  model.backbone_trained = j.value("backbone_trained", false);
  model.hri_trained = j.value("hri_trained", false);
  return model;
}

}  // namespace pifukit
