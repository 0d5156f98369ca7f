#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pifukit/camera.hpp"
#include "pifukit/sampling.hpp"
#include "pifukit/tensor.hpp"

namespace pifukit {

enum class Fusion { Hri, LateFusion };
enum class QueryMode { LowOnly, Full };
enum class TrainStage { Backbone, Hri };
enum class LossKind { Mse, Bce };

std::string to_string(Fusion f);
std::string to_string(QueryMode m);
std::string to_string(TrainStage s);
std::string to_string(LossKind k);
Fusion parse_fusion(const std::string& s);
QueryMode parse_query_mode(const std::string& s);
TrainStage parse_stage(const std::string& s);
LossKind parse_loss(const std::string& s);

struct ModelConfig {
  int r_high = 256;
  int r_low = 128;
  int c_feat = 64;
  int backbone_width = 32;  // channels after the first backbone conv
  int hri_width = 32;       // channels of the first HRI conv
  int kernel = 3;
  int parse_classes = 19;  // K, including the background channel
  bool use_depth = true;
  bool use_parse = true;
  bool use_mask = true;
  bool hri_use_depth = false;
  bool hri_use_parse = false;
  std::vector<int> low_hidden{128, 64, 32};
  int tap_index = 1;  // hidden layer of the low decoder exported to the high decoder
  std::vector<int> high_hidden{64, 32};
  Fusion fusion = Fusion::Hri;
  std::uint64_t seed = 0;

  void validate() const;
  /// Backbone input channels: normal 3, depth 1, parse K, mask 1 per toggle.
  int backbone_channels() const;
  /// HRI input channels: normal 3 plus the optional high-res depth and parse.
  int hri_channels() const;
  int tap_width() const { return low_hidden.at(static_cast<std::size_t>(tap_index)); }
};

/// Maps in network layout. `high` is R_high and feeds the HRI, `low` is the
/// 2x2-pooled backbone input at R_low.
template <typename T>
struct ViewInput {
  Camera camera;
  Tensor<T> high;  // 1 x hri_channels x R_high x R_high
  Tensor<T> low;   // 1 x backbone_channels x R_low x R_low
};

/// Per-view encoder outputs cached for querying.
template <typename T>
struct ViewFeatures {
  Camera camera;
  Tensor<T> low;  // 1 x C_feat x R_low/4 x R_low/4
  Tensor<T> hri;  // 1 x C_feat x R_high/2 x R_high/2; empty in low-only mode
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }

  /// Re-draws every parameter from config().seed.
  void init();

  /// Channel-stacks a map stack rendered at R_high into both encoder inputs.
  ViewInput<T> prepare(const MapStack& maps) const;

  /// Backbone on the R_low input: returns (R_low/4)^2 x C_feat features.
  Tensor<T> encode_low(const Tensor<T>& low_input) const;
  /// HRI on the R_high input fused with the backbone features.
  Tensor<T> encode_high(const Tensor<T>& high_input, const Tensor<T>& low_features) const;

  ViewFeatures<T> encode(const ViewInput<T>& view, QueryMode mode) const;

  /// Occupancy in (0, 1) for camera-space points. Throws OutOfFrustum when a
  /// point projects more than one pixel outside the image.
  std::vector<double> query_camera_space(const ViewFeatures<T>& features, std::span<const Vec3> points,
                                         QueryMode mode) const;
  /// Same for world-space points.
  std::vector<double> query(const ViewFeatures<T>& features, std::span<const Vec3> points, QueryMode mode) const;

  /// Loss of one batch of camera-space points. The backbone stage scores the
  /// low decoder, the hri stage the high decoder.
  double loss(const ViewInput<T>& view, std::span<const Vec3> points, std::span<const T> targets, LossKind kind,
              TrainStage stage) const;
  /// As loss(), accumulating parameter gradients of the stage. In the hri stage
  /// gradients stop at the HRI unless `through_backbone` is set.
  double step(const ViewInput<T>& view, std::span<const Vec3> points, std::span<const T> targets, LossKind kind,
              TrainStage stage, bool through_backbone = false);

  std::vector<NamedParam<T>> parameters(TrainStage stage);
  std::vector<NamedParam<T>> all_parameters();

  bool backbone_trained = false;
  bool hri_trained = false;

  struct Backbone {
    Conv2D<T> conv_a, conv_b, res1a, res1b, res2a, res2b;
  };
  struct Hri {
    Conv2D<T> conv1, conv2, conv3, conv4;
  };
  Backbone backbone;
  std::vector<Linear<T>> low_decoder;
  Hri hri;
  std::vector<Linear<T>> high_decoder;

 private:
  ModelConfig config_;
};

/// True when a camera-space point projects at most one pixel outside the image.
bool in_frustum(const Camera& camera, const Vec3& camera_point);

/// Coordinates on the backbone map (stride 8 in R_high pixels) and the HRI map (stride 2).
MapCoord low_map_coord(double u, double v);
MapCoord high_map_coord(double u, double v);

// --- training ---------------------------------------------------------------------------

struct TrainingView {
  ViewInput<float> input;               // from Model::prepare
  std::vector<TrainingSample> samples;  // camera-space points
};

struct TrainConfig {
  TrainStage stage = TrainStage::Backbone;
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 2048;
  LossKind loss = LossKind::Mse;
  std::uint64_t seed = 0;
  /// Per-view cap on samples used per epoch (0: all).
  int max_samples_per_view = 0;
};

struct LossCurve {
  TrainStage stage = TrainStage::Backbone;
  LossKind loss = LossKind::Mse;
  std::vector<double> epoch_loss;  // sample-weighted mean over the epoch
  long steps = 0;
};

/// Minibatch Adam over shuffled (view, batch) pairs. Stage hri freezes the
/// backbone and low decoder and requires backbone_trained. Throws
/// DivergenceDetected on a non-finite loss.
LossCurve train(Model<float>& model, std::span<const TrainingView> views, const TrainConfig& config);

void save_loss_curve(const std::filesystem::path& path, const LossCurve& curve);

// --- checkpoints ---------------------------------------------------------------------------

/// Directory with manifest.json and one F32MAP file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace pifukit
