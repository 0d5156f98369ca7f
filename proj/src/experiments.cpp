#include "pifukit/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "pifukit/json_io.hpp"

namespace pifukit {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
  model.validate();
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (grid < 16) throw ConfigError("experiment grid must be at least 16");
  if (eval_views.empty()) throw ConfigError("experiment needs at least one eval view");
  if (metric_samples < 1000) throw ConfigError("metric_samples must be at least 1000");
  if (iou_resolution < 1) throw ConfigError("iou_resolution must be positive");
  if (backbone_train.stage != TrainStage::Backbone) throw ConfigError("backbone_train.stage must be backbone");
  if (hri_train.stage != TrainStage::Hri) throw ConfigError("hri_train.stage must be hri");
}

LossKind default_loss(SamplingScheme scheme) {
  return scheme == SamplingScheme::Spatial ? LossKind::Bce : LossKind::Mse;
}

std::vector<TrainingView> load_training_views(const fs::path& dataset_dir, const DatasetManifest& manifest,
                                              const Model<float>& model, SamplingScheme scheme,
                                              const std::string& split) {
  std::vector<TrainingView> views;
  for (const MeshEntry* m : manifest.split(split))
    for (const auto& v : m->views) {
      const MapStack maps = load_map_stack(dataset_dir / v.maps);
      const auto& path = scheme == SamplingScheme::Dos ? v.dos_samples : v.spatial_samples;
      views.push_back({model.prepare(maps), load_samples(dataset_dir / path, scheme)});
    }
  if (views.empty()) throw ConfigError("dataset split '" + split + "' has no views");
  return views;
}

std::vector<ViewEvaluation> evaluate_test_split(const Model<float>& model, QueryMode mode, const fs::path& dataset_dir,
                                                const DatasetManifest& manifest, const ExperimentConfig& cfg,
                                                std::uint64_t metric_seed) {
  std::vector<ViewEvaluation> out;
  const auto test = manifest.split("test");
  if (test.empty()) throw ConfigError("dataset has no test meshes");
  for (const MeshEntry* m : test) {
    const TriMesh gt = load_mesh(dataset_dir / m->mesh, false);
    for (int vi : cfg.eval_views) {
      if (vi < 0 || vi >= static_cast<int>(m->views.size()))
        throw ConfigError("eval view " + std::to_string(vi) + " does not exist for " + m->id);
      const MapStack maps = load_map_stack(dataset_dir / m->views[vi].maps);
      const auto features = model.encode(model.prepare(maps), mode);
      const OccupancyGrid grid = eval_grid(model, features, cfg.grid, mode);

      ViewEvaluation e;
      e.mesh_id = m->id;
      e.view = vi;
      e.metrics.n_samples = cfg.metric_samples;
      e.metrics.seed = metric_seed;
      try {
        const TriMesh recon = marching_cubes(grid, 0.5, true);
        e.faces = recon.face_count();
        EvalOptions opt;
        opt.n_samples = cfg.metric_samples;
        opt.seed = metric_seed;
        opt.iou_resolution = cfg.iou_resolution;
        e.metrics = evaluate(recon, gt, maps.camera, opt);
        double sum = 0;
        for (const auto& r : m->thin_regions) {
          e.region_iou.emplace_back(r.part_label, region_iou(recon, gt, r.box, cfg.iou_resolution));
          sum += e.region_iou.back().second;
        }
        if (!m->thin_regions.empty()) e.metrics.fin_iou = sum / static_cast<double>(m->thin_regions.size());
      } catch (const EmptySurface&) {
        e.empty_surface = true;
        constexpr double inf = std::numeric_limits<double>::infinity();
        e.metrics.cd = e.metrics.p2s = e.metrics.roughness = inf;
        e.metrics.normal_err = 2;
        for (const auto& r : m->thin_regions) e.region_iou.emplace_back(r.part_label, 0.0);
        if (!m->thin_regions.empty()) e.metrics.fin_iou = 0.0;
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

Model<float> with_backbone_of(const Model<float>& source, Fusion fusion) {
  if (!source.backbone_trained) throw PreconditionError("source model has no trained backbone");
  ModelConfig c = source.config();
  c.fusion = fusion;
  Model<float> out(c);
  Model<float> src = source;
  auto from = src.parameters(TrainStage::Backbone);
  auto to = out.parameters(TrainStage::Backbone);
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor->shape() != to[i].tensor->shape())
      throw ShapeMismatch("backbone parameter " + from[i].name + " does not match");
    *to[i].tensor = *from[i].tensor;
  }
  out.backbone_trained = true;
  return out;
}

namespace {

double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// JSON has no infinities; non-finite values are written as null.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json metrics_json(const MetricsReport& r) {
  json j = r;
  for (const char* k : {"cd", "p2s", "roughness"}) j[k] = number(j[k].get<double>());
  return j;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void say(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<double> backbone_loss, hri_loss;
  std::vector<ViewEvaluation> evals;

  double mean_of(double MetricsReport::*field) const {
    std::vector<double> xs;
    for (const auto& e : evals) xs.push_back(e.metrics.*field);
    return mean(xs);
  }
  double mean_fin_iou() const {
    std::vector<double> xs;
    for (const auto& e : evals)
      if (e.metrics.fin_iou) xs.push_back(*e.metrics.fin_iou);
    return mean(xs);
  }
};

json run_json(const SeedRun& r) {
  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back(to_json(e));
  json j{{"seed", r.seed},
         {"backbone_final_loss", r.backbone_loss.empty() ? json(nullptr) : number(r.backbone_loss.back())},
         {"mean_cd", number(r.mean_of(&MetricsReport::cd))},
         {"mean_p2s", number(r.mean_of(&MetricsReport::p2s))},
         {"mean_normal_err", number(r.mean_of(&MetricsReport::normal_err))},
         {"mean_roughness", number(r.mean_of(&MetricsReport::roughness))},
         {"mean_fin_iou", number(r.mean_fin_iou())},
         {"test", evals}};
  if (!r.hri_loss.empty()) j["hri_final_loss"] = number(r.hri_loss.back());
  return j;
}

json arm_json(const std::vector<SeedRun>& runs) {
  json seeds = json::array();
  std::vector<double> cd, p2s, normal, rough, fin;
  for (const auto& r : runs) {
    seeds.push_back(run_json(r));
    cd.push_back(r.mean_of(&MetricsReport::cd));
    p2s.push_back(r.mean_of(&MetricsReport::p2s));
    normal.push_back(r.mean_of(&MetricsReport::normal_err));
    rough.push_back(r.mean_of(&MetricsReport::roughness));
    fin.push_back(r.mean_fin_iou());
  }
  return {{"runs", seeds},
          {"median",
           {{"cd", number(median(cd))},
            {"p2s", number(median(p2s))},
            {"normal_err", number(median(normal))},
            {"roughness", number(median(rough))},
            {"fin_iou", number(median(fin))}}}};
}

json header(const char* name, const ExperimentConfig& cfg, const DatasetManifest& manifest) {
  json c = cfg;
  return {{"experiment", name},
          {"version", version_string()},
          {"config", c},
          {"dataset_version", manifest.version},
          {"test_meshes", manifest.split("test").size()},
          {"train_meshes", manifest.split("train").size()}};
}

}  // namespace

json to_json(const ViewEvaluation& e) {
  json regions = json::array();
  for (const auto& [label, iou] : e.region_iou) regions.push_back({{"label", label}, {"iou", iou}});
  return {{"mesh", e.mesh_id},         {"view", e.view},         {"empty_surface", e.empty_surface},
          {"faces", e.faces},          {"metrics", metrics_json(e.metrics)}, {"region_iou", regions}};
}

json run_sampling_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const fs::path root = cfg.dataset;
  const DatasetManifest manifest = load_manifest(root);
  ModelConfig mc = cfg.model;
  mc.parse_classes = manifest.parse_classes;
  if (mc.r_high != manifest.config.resolution)
    throw ConfigError("model r_high " + std::to_string(mc.r_high) + " differs from the dataset resolution " +
                      std::to_string(manifest.config.resolution));
  const QueryMode mode = cfg.train_hri ? QueryMode::Full : QueryMode::LowOnly;

  std::map<SamplingScheme, std::vector<SeedRun>> arms;
  for (SamplingScheme scheme : {SamplingScheme::Spatial, SamplingScheme::Dos}) {
    const auto views = load_training_views(root, manifest, Model<float>(mc), scheme);
    for (std::uint64_t seed : cfg.seeds) {
      Timer t;
      ModelConfig c = mc;
      c.seed = seed;
      Model<float> model(c);
      SeedRun run;
      run.seed = seed;
      TrainConfig tb = cfg.backbone_train;
      tb.seed = seed;
      if (cfg.loss_by_scheme) tb.loss = default_loss(scheme);
      run.backbone_loss = train(model, views, tb).epoch_loss;
      if (cfg.train_hri) {
        TrainConfig th = cfg.hri_train;
        th.seed = seed;
        if (cfg.loss_by_scheme) th.loss = default_loss(scheme);
        run.hri_loss = train(model, views, th).epoch_loss;
      }
      const double train_s = t.seconds();
      run.evals = evaluate_test_split(model, mode, root, manifest, cfg, seed);
      say(progress, "sampling " + to_string(scheme) + " seed " + std::to_string(seed) + ": loss " +
                        fmt(run.backbone_loss.empty() ? 0.0 : run.backbone_loss.back()) + ", fin_iou " +
                        fmt(run.mean_fin_iou()) + ", roughness " + fmt(run.mean_of(&MetricsReport::roughness)) +
                        " (train " + fmt(train_s) + " s, total " + fmt(t.seconds()) + " s)");
      arms[scheme].push_back(std::move(run));
    }
  }

  // Per thin region: median IoU over seeds in each arm.
  const auto& sp = arms[SamplingScheme::Spatial];
  const auto& dos = arms[SamplingScheme::Dos];
  std::size_t regions = 0, wins = 0;
  json per_region = json::array();
  for (std::size_t e = 0; e < sp.front().evals.size(); ++e)
    for (std::size_t r = 0; r < sp.front().evals[e].region_iou.size(); ++r) {
      std::vector<double> a, b;
      for (const auto& run : sp) a.push_back(run.evals[e].region_iou[r].second);
      for (const auto& run : dos) b.push_back(run.evals[e].region_iou[r].second);
      const double ma = median(a), mb = median(b);
      ++regions;
      wins += mb > ma;
      per_region.push_back({{"mesh", sp.front().evals[e].mesh_id},
                            {"view", sp.front().evals[e].view},
                            {"label", sp.front().evals[e].region_iou[r].first},
                            {"spatial_iou", ma},
                            {"dos_iou", mb}});
    }
  std::vector<double> rs, rd, fs_, fd;
  for (const auto& run : sp) {
    rs.push_back(run.mean_of(&MetricsReport::roughness));
    fs_.push_back(run.mean_fin_iou());
  }
  for (const auto& run : dos) {
    rd.push_back(run.mean_of(&MetricsReport::roughness));
    fd.push_back(run.mean_fin_iou());
  }
  const double rough_sp = median(rs), rough_dos = median(rd);
  const double win_fraction = regions ? static_cast<double>(wins) / static_cast<double>(regions) : 0.0;
  const double reduction = (rough_sp - rough_dos) / rough_sp;

  json report = header("sampling", cfg, manifest);
  report["arms"] = {{"spatial", arm_json(sp)}, {"dos", arm_json(dos)}};
  report["verdict"] = {{"dos_iou_minus_spatial_iou", number(median(fd) - median(fs_))},
                       {"spatial_roughness_minus_dos_roughness", number(rough_sp - rough_dos)},
                       {"roughness_reduction", number(reduction)},
                       {"regions", regions},
                       {"regions_dos_better", wins},
                       {"iou_win_fraction", win_fraction},
                       {"per_region", per_region},
                       {"iou_criterion_met", regions > 0 && win_fraction >= 0.8},
                       {"roughness_criterion_met", std::isfinite(reduction) && reduction >= 0.10}};
  return report;
}

json run_hri_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const fs::path root = cfg.dataset;
  const DatasetManifest manifest = load_manifest(root);
  ModelConfig mc = cfg.model;
  mc.parse_classes = manifest.parse_classes;
  mc.fusion = Fusion::Hri;
  if (mc.r_high != manifest.config.resolution)
    throw ConfigError("model r_high " + std::to_string(mc.r_high) + " differs from the dataset resolution " +
                      std::to_string(manifest.config.resolution));
  const auto views = load_training_views(root, manifest, Model<float>(mc), cfg.hri_scheme);

  std::map<Fusion, std::vector<SeedRun>> arms;
  json backbones = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    Timer t;
    ModelConfig c = mc;
    c.seed = seed;
    Model<float> base(c);
    TrainConfig tb = cfg.backbone_train;
    tb.seed = seed;
    if (cfg.loss_by_scheme) tb.loss = default_loss(cfg.hri_scheme);
    const auto curve = train(base, views, tb);
    backbones.push_back({{"seed", seed}, {"final_loss", number(curve.epoch_loss.empty() ? 0.0 : curve.epoch_loss.back())}});
    say(progress, "hri backbone seed " + std::to_string(seed) + ": loss " +
                      fmt(curve.epoch_loss.empty() ? 0.0 : curve.epoch_loss.back()) + " (" + fmt(t.seconds()) + " s)");
    for (Fusion f : {Fusion::Hri, Fusion::LateFusion}) {
      Timer ta;
      Model<float> model = with_backbone_of(base, f);
      SeedRun run;
      run.seed = seed;
      run.backbone_loss = curve.epoch_loss;
      TrainConfig th = cfg.hri_train;
      th.seed = seed;
      if (cfg.loss_by_scheme) th.loss = default_loss(cfg.hri_scheme);
      run.hri_loss = train(model, views, th).epoch_loss;
      run.evals = evaluate_test_split(model, QueryMode::Full, root, manifest, cfg, seed);
      say(progress, "hri " + to_string(f) + " seed " + std::to_string(seed) + ": loss " +
                        fmt(run.hri_loss.empty() ? 0.0 : run.hri_loss.back()) + ", cd " +
                        fmt(run.mean_of(&MetricsReport::cd)) + ", p2s " + fmt(run.mean_of(&MetricsReport::p2s)) +
                        ", normal " + fmt(run.mean_of(&MetricsReport::normal_err)) + " (" + fmt(ta.seconds()) + " s)");
      arms[f].push_back(std::move(run));
    }
  }

  const auto med = [&](Fusion f, double MetricsReport::*field) {
    std::vector<double> xs;
    for (const auto& r : arms[f]) xs.push_back(r.mean_of(field));
    return median(xs);
  };
  const double cd_h = med(Fusion::Hri, &MetricsReport::cd), cd_l = med(Fusion::LateFusion, &MetricsReport::cd);
  const double p_h = med(Fusion::Hri, &MetricsReport::p2s), p_l = med(Fusion::LateFusion, &MetricsReport::p2s);
  const double n_h = med(Fusion::Hri, &MetricsReport::normal_err);
  const double n_l = med(Fusion::LateFusion, &MetricsReport::normal_err);

  json report = header("hri", cfg, manifest);
  report["backbones"] = backbones;
  report["arms"] = {{"hri", arm_json(arms[Fusion::Hri])}, {"late_fusion", arm_json(arms[Fusion::LateFusion])}};
  report["verdict"] = {{"cd_hri", number(cd_h)},
                       {"cd_late_fusion", number(cd_l)},
                       {"p2s_hri", number(p_h)},
                       {"p2s_late_fusion", number(p_l)},
                       {"normal_hri", number(n_h)},
                       {"normal_late_fusion", number(n_l)},
                       {"cd_criterion_met", std::isfinite(cd_h) && cd_h <= cd_l},
                       {"p2s_criterion_met", std::isfinite(p_h) && p_h <= p_l}};
  return report;
}

void to_json(json& j, const ExperimentConfig& c) {
  j = {{"dataset", c.dataset},
       {"model", c.model},
       {"backbone_train", c.backbone_train},
       {"hri_train", c.hri_train},
       {"train_hri", c.train_hri},
       {"hri_scheme", c.hri_scheme},
       {"loss_by_scheme", c.loss_by_scheme},
       {"seeds", c.seeds},
       {"grid", c.grid},
       {"eval_views", c.eval_views},
       {"metric_samples", c.metric_samples},
       {"iou_resolution", c.iou_resolution}};
}

void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.dataset = j.value("dataset", d.dataset);
  c.model = j.value("model", d.model);
  c.backbone_train = j.value("backbone_train", d.backbone_train);
  c.hri_train = j.value("hri_train", d.hri_train);
  c.train_hri = j.value("train_hri", d.train_hri);
  c.hri_scheme = j.value("hri_scheme", d.hri_scheme);
  c.loss_by_scheme = j.value("loss_by_scheme", d.loss_by_scheme);
  c.seeds = j.value("seeds", d.seeds);
  c.grid = j.value("grid", d.grid);
  c.eval_views = j.value("eval_views", d.eval_views);
  c.metric_samples = j.value("metric_samples", d.metric_samples);
  c.iou_resolution = j.value("iou_resolution", d.iou_resolution);
}

}  // namespace pifukit
