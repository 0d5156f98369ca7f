#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pifukit/metrics.hpp"
#include "pifukit/model.hpp"
#include "pifukit/reconstruct.hpp"
#include "pifukit/synthdata.hpp"

namespace pifukit {

/// Shared settings of the two paired experiments.
struct ExperimentConfig {
  std::string dataset;                 // directory holding manifest.json
  ModelConfig model;                   // seed is replaced per run
  TrainConfig backbone_train{.stage = TrainStage::Backbone};
  TrainConfig hri_train{.stage = TrainStage::Hri};
  bool train_hri = false;              // sampling experiment: also train the HRI and query in full mode
  SamplingScheme hri_scheme = SamplingScheme::Dos;  // labels used by the HRI experiment
  bool loss_by_scheme = true;          // BCE for spatial labels, MSE for DOS; false keeps the configured loss
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int grid = 128;
  std::vector<int> eval_views{0};      // view indices reconstructed per test mesh
  std::size_t metric_samples = 20000;
  int iou_resolution = 32;

  void validate() const;
};

/// Loss paired with each label kind: BCE for binary spatial labels, MSE for soft DOS labels.
LossKind default_loss(SamplingScheme scheme);

/// Training views of one split with the samples of one scheme.
std::vector<TrainingView> load_training_views(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                                              const Model<float>& model, SamplingScheme scheme,
                                              const std::string& split = "train");

/// One reconstruction of one test view.
struct ViewEvaluation {
  std::string mesh_id;
  int view = 0;
  bool empty_surface = false;
  std::size_t faces = 0;
  MetricsReport metrics;
  std::vector<std::pair<int, double>> region_iou;  // (part label, IoU)
};

/// Reconstructs every (test mesh, eval view) pair at `grid` and scores it.
std::vector<ViewEvaluation> evaluate_test_split(const Model<float>& model, QueryMode mode,
                                                const std::filesystem::path& dataset_dir,
                                                const DatasetManifest& manifest, const ExperimentConfig& cfg,
                                                std::uint64_t metric_seed);

/// New model of fusion `fusion` carrying the backbone and low decoder of `source`.
Model<float> with_backbone_of(const Model<float>& source, Fusion fusion);

using ProgressFn = std::function<void(const std::string&)>;

/// Spatial vs DOS labels with otherwise identical runs. Report holds both arms,
/// per-seed evaluations and a verdict block.
nlohmann::json run_sampling_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// HRI vs late fusion on one frozen backbone per seed.
nlohmann::json run_hri_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
nlohmann::json to_json(const ViewEvaluation& e);

}  // namespace pifukit
