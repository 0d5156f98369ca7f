// pifukit command-line tool.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "pifukit/experiments.hpp"
#include "pifukit/gradcheck.hpp"
#include "pifukit/json_io.hpp"
#include "pifukit/metrics.hpp"
#include "pifukit/reconstruct.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pifukit;

namespace {

// Options every subcommand carries.
struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  bool force = false;
  CLI::Option* seed_opt = nullptr;

  bool seed_given() const { return seed_opt && seed_opt->count() > 0; }
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  c.seed_opt = cmd->add_option("--seed", c.seed, "Seed; overrides the config file's seed");
  cmd->add_option("--out", c.out, out_help)->required();
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  return parse_json(read_file(c.config), c.config);
}

void guard_output(const Common& c) {
  if (fs::exists(c.out) && !c.force) throw IoError("output " + c.out + " exists; pass --force to overwrite");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Manifest sufficient to re-run the command.
void write_run_manifest(const fs::path& path, const std::string& command, const Common& c, const json& resolved) {
  const json j{{"command", command},
               {"version", version_string()},
               {"seed", c.seed},
               {"out", c.out},
               {"config", resolved}};
  write_file(path, j.dump(2) + "\n");
}

fs::path sidecar(const std::string& out) { return fs::path(out + ".run.json"); }

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  write_file(path, j.dump(2) + "\n");
}

Camera load_camera(const std::string& path) {
  const json j = parse_json(read_file(path), path);
  try {
    return (j.contains("camera") ? j.at("camera") : j).get<Camera>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid camera in " + path + ": " + e.what());
  }
}

template <typename T>
T from_config(const json& j, const char* key) {
  try {
    return j.contains(key) ? j.at(key).get<T>() : T{};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid '") + key + "' config: " + e.what());
  }
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Validation: return 2;
    case ErrorCategory::Numerical: return 3;
    case ErrorCategory::Io: return 4;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pifukit: pixel-aligned implicit reconstruction toolkit"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);

  // gen
  Common gen_c;
  std::string gen_shape;
  int gen_level = -1;
  double gen_radius = -1;
  auto* gen = app.add_subcommand("gen", "Generate a procedural mesh as OBJ");
  add_common(gen, gen_c, "Output OBJ path");
  gen->add_option("--shape", gen_shape, "sphere | capsule_figure | fin_sphere | wavy_test");
  gen->add_option("--level", gen_level, "Icosphere subdivision level");
  gen->add_option("--radius", gen_radius, "Body radius (fin_sphere needs radius + fin_extent <= 0.93)");

  // dataset
  Common ds_c;
  std::string ds_shape;
  int ds_meshes = -1, ds_views = -1, ds_res = -1;
  long ds_samples = -1;
  double ds_radius = -1;
  auto* ds = app.add_subcommand("dataset", "Build a dataset: meshes, rendered maps, both sample schemes");
  add_common(ds, ds_c, "Output dataset directory");
  ds->add_option("--shape", ds_shape, "Shape kind");
  ds->add_option("--meshes", ds_meshes, "Number of meshes");
  ds->add_option("--views", ds_views, "Views per mesh");
  ds->add_option("--resolution", ds_res, "Map resolution R_high");
  ds->add_option("--samples", ds_samples, "Samples per view and scheme");
  ds->add_option("--radius", ds_radius, "Body radius of each shape");

  // sample
  Common sm_c;
  std::string sm_mesh, sm_scheme = "dos";
  long sm_n = -1;
  double sm_yaw = 0;
  auto* sm = app.add_subcommand("sample", "Draw training samples in the camera space of one view");
  add_common(sm, sm_c, "Output sample file");
  sm->add_option("--mesh", sm_mesh, "Input OBJ")->required();
  sm->add_option("--scheme", sm_scheme, "spatial | dos");
  sm->add_option("--n", sm_n, "Number of samples");
  sm->add_option("--yaw", sm_yaw, "Camera yaw in radians");

  // render
  Common rd_c;
  std::string rd_mesh;
  int rd_res = 256, rd_k = 0;
  double rd_yaw = 0;
  bool rd_preview = false;
  auto* rd = app.add_subcommand("render", "Render the conditioning map stack of a mesh");
  add_common(rd, rd_c, "Output F32MAP path (camera and layout go to <out>.json)");
  rd->add_option("--mesh", rd_mesh, "Input OBJ")->required();
  rd->add_option("--resolution", rd_res, "Image resolution");
  rd->add_option("--yaw", rd_yaw, "Camera yaw in radians");
  rd->add_option("--parse-classes", rd_k, "Parse channels K (0: from the mesh labels)");
  rd->add_flag("--preview", rd_preview, "Also write PGM previews of mask and depth");

  // train
  Common tr_c;
  std::string tr_dataset, tr_scheme = "dos", tr_stage, tr_init, tr_fusion;
  int tr_epochs = -1;
  auto* tr = app.add_subcommand("train", "Train one stage on a dataset's train split");
  add_common(tr, tr_c, "Output checkpoint directory");
  tr->add_option("--dataset", tr_dataset, "Dataset directory")->required();
  tr->add_option("--scheme", tr_scheme, "spatial | dos");
  tr->add_option("--stage", tr_stage, "backbone | hri");
  tr->add_option("--init", tr_init, "Checkpoint to start from (required for stage hri)");
  tr->add_option("--fusion", tr_fusion, "hri | late_fusion (stage hri)");
  tr->add_option("--epochs", tr_epochs, "Epochs");

  // reconstruct
  Common rc_c;
  std::string rc_ckpt, rc_maps, rc_mode;
  int rc_grid = 128;
  double rc_iso = 0.5;
  auto* rc = app.add_subcommand("reconstruct", "Extract a mesh from a checkpoint and one map stack");
  add_common(rc, rc_c, "Output OBJ path");
  rc->add_option("--checkpoint", rc_ckpt, "Checkpoint directory")->required();
  rc->add_option("--maps", rc_maps, "F32MAP map stack")->required();
  rc->add_option("--grid", rc_grid, "Grid resolution G");
  rc->add_option("--mode", rc_mode, "low | full (default: full when the HRI is trained)");
  rc->add_option("--iso", rc_iso, "Iso level");

  // eval
  Common ev_c;
  std::string ev_recon, ev_gt, ev_camera, ev_regions;
  long ev_samples = -1;
  int ev_iou_res = -1;
  auto* ev = app.add_subcommand("eval", "Score a reconstruction against ground truth");
  add_common(ev, ev_c, "Output report JSON");
  ev->add_option("--recon", ev_recon, "Reconstructed OBJ")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth OBJ")->required();
  ev->add_option("--camera", ev_camera, "Camera JSON (or a map stack's .json sidecar)")->required();
  ev->add_option("--regions", ev_regions, "JSON list of boxes {lo, hi} for fin_iou");
  ev->add_option("--samples", ev_samples, "Surface samples per direction");
  ev->add_option("--iou-resolution", ev_iou_res, "Voxels per axis in region_iou");

  // gradcheck
  Common gc_c;
  auto* gc = app.add_subcommand("gradcheck", "Gradient-check every kernel and the full model graph");
  add_common(gc, gc_c, "Output report JSON");

  // experiments
  Common es_c, eh_c;
  std::string es_dataset, eh_dataset;
  auto* es = app.add_subcommand("experiment-sampling", "Paired spatial vs depth-oriented sampling runs");
  add_common(es, es_c, "Output report JSON");
  es->add_option("--dataset", es_dataset, "Dataset directory (overrides the config)");
  auto* eh = app.add_subcommand("experiment-hri", "Paired HRI vs late-fusion runs on a shared backbone");
  add_common(eh, eh_c, "Output report JSON");
  eh->add_option("--dataset", eh_dataset, "Dataset directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto progress = [](const std::string& msg) { std::cerr << msg << std::endl; };

  try {
    if (gen->parsed()) {
      guard_output(gen_c);
      ShapeSpec spec = load_config(gen_c).get<ShapeSpec>();
      if (!gen_shape.empty()) spec.kind = parse_shape_kind(gen_shape);
      if (gen_radius > 0) spec.radius = gen_radius;
      if (gen_level >= 0) spec.level = gen_level;
      if (gen_c.seed_given()) spec.seed = gen_c.seed;
      spec.validate();
      const TriMesh mesh = make_shape(spec);
      ensure_parent(gen_c.out);
      save_obj(mesh, gen_c.out);
      write_run_manifest(sidecar(gen_c.out), "gen", gen_c, spec);
      std::cout << "wrote " << gen_c.out << " (" << mesh.vertex_count() << " vertices, " << mesh.face_count()
                << " faces)\n";
    } else if (ds->parsed()) {
      guard_output(ds_c);
      DatasetConfig cfg = load_config(ds_c).get<DatasetConfig>();
      if (!ds_shape.empty()) cfg.shape.kind = parse_shape_kind(ds_shape);
      if (ds_radius > 0) cfg.shape.radius = ds_radius;
      if (ds_meshes > 0) cfg.n_meshes = ds_meshes;
      if (ds_views > 0) cfg.views_per_mesh = ds_views;
      if (ds_res > 0) cfg.resolution = ds_res;
      if (ds_samples > 0) cfg.sampler.n_total = static_cast<std::size_t>(ds_samples);
      if (ds_c.seed_given()) cfg.seed = ds_c.seed;
      const auto manifest = build_dataset(cfg, ds_c.out);
      write_run_manifest(fs::path(ds_c.out) / "run.json", "dataset", ds_c, cfg);
      std::cout << "wrote " << manifest.meshes.size() << " meshes to " << ds_c.out << "\n";
    } else if (sm->parsed()) {
      guard_output(sm_c);
      SamplerConfig cfg = load_config(sm_c).get<SamplerConfig>();
      if (sm_n > 0) cfg.n_total = static_cast<std::size_t>(sm_n);
      if (sm_c.seed_given()) cfg.seed = sm_c.seed;
      const SamplingScheme scheme = parse_scheme(sm_scheme);
      const TriMesh mesh = load_mesh(sm_mesh, false);
      const Camera cam = Camera::with_default_scale(256, sm_yaw);
      const TriMesh cm = transformed(mesh, cam.world_to_camera());
      const auto samples = scheme == SamplingScheme::Dos ? dos_samples(cm, cfg) : spatial_samples(cm, cfg);
      ensure_parent(sm_c.out);
      save_samples(sm_c.out, samples, scheme, cfg);
      write_run_manifest(sidecar(sm_c.out), "sample", sm_c,
                         {{"sampler", cfg}, {"scheme", scheme}, {"mesh", sm_mesh}, {"yaw", sm_yaw}});
      std::cout << "wrote " << samples.size() << " samples to " << sm_c.out << "\n";
    } else if (rd->parsed()) {
      guard_output(rd_c);
      const TriMesh mesh = load_mesh(rd_mesh, false);
      Camera cam = Camera::with_default_scale(rd_res, rd_yaw);
      const json cj = load_config(rd_c);
      if (cj.contains("camera")) cam = cj.at("camera").get<Camera>();
      const MapStack maps = render_maps(mesh, cam, {rd_k});
      ensure_parent(rd_c.out);
      save_map_stack(rd_c.out, maps);
      if (rd_preview) {
        write_pgm(rd_c.out + ".mask.pgm", maps.mask, 0, 255.0);
        Map2D depth = maps.rel_depth;
        for (std::size_t i = 0; i < depth.data.size(); ++i)
          depth.data[i] = maps.mask.data[i] > 0 ? 0.5f + 0.5f * depth.data[i] : 0.0f;
        write_pgm(rd_c.out + ".depth.pgm", depth, 0, 255.0);
      }
      write_run_manifest(sidecar(rd_c.out), "render", rd_c,
                         {{"camera", cam}, {"mesh", rd_mesh}, {"parse_classes", maps.parse_classes}});
      std::cout << "wrote " << rd_c.out << " (" << maps.parse_classes << " parse classes)\n";
    } else if (tr->parsed()) {
      guard_output(tr_c);
      const json cj = load_config(tr_c);
      TrainConfig tc = from_config<TrainConfig>(cj, "train");
      if (!cj.contains("train") || !cj["train"].contains("loss")) tc.loss = default_loss(parse_scheme(tr_scheme));
      if (!tr_stage.empty()) tc.stage = parse_stage(tr_stage);
      if (tr_epochs >= 0) tc.epochs = tr_epochs;
      if (tr_c.seed_given()) tc.seed = tr_c.seed;
      const DatasetManifest manifest = load_manifest(tr_dataset);

      Model<float> model;
      if (!tr_init.empty()) {
        model = load_checkpoint(tr_init);
        if (!tr_fusion.empty() && parse_fusion(tr_fusion) != model.config().fusion)
          model = with_backbone_of(model, parse_fusion(tr_fusion));
      } else {
        ModelConfig mc = from_config<ModelConfig>(cj, "model");
        mc.parse_classes = manifest.parse_classes;
        mc.r_high = manifest.config.resolution;
        mc.r_low = mc.r_high / 2;
        if (!tr_fusion.empty()) mc.fusion = parse_fusion(tr_fusion);
        if (tr_c.seed_given()) mc.seed = tr_c.seed;
        model = Model<float>(mc);
      }
      const auto views = load_training_views(tr_dataset, manifest, model, parse_scheme(tr_scheme));
      const LossCurve curve = train(model, views, tc);
      save_checkpoint(tr_c.out, model);
      save_loss_curve(fs::path(tr_c.out) / "loss.json", curve);
      write_run_manifest(fs::path(tr_c.out) / "run.json", "train", tr_c,
                         {{"dataset", tr_dataset},
                          {"scheme", tr_scheme},
                          {"init", tr_init},
                          {"model", model.config()},
                          {"train", tc}});
      std::cout << "trained " << to_string(tc.stage) << " for " << curve.steps << " steps, final loss "
                << (curve.epoch_loss.empty() ? 0.0 : curve.epoch_loss.back()) << "\n";
    } else if (rc->parsed()) {
      guard_output(rc_c);
      const Model<float> model = load_checkpoint(rc_ckpt);
      const QueryMode mode = !rc_mode.empty() ? parse_query_mode(rc_mode)
                             : model.hri_trained ? QueryMode::Full
                                                 : QueryMode::LowOnly;
      const MapStack maps = load_map_stack(rc_maps);
      const auto features = model.encode(model.prepare(maps), mode);
      const TriMesh mesh = marching_cubes(eval_grid(model, features, rc_grid, mode), rc_iso, true);
      ensure_parent(rc_c.out);
      save_obj(mesh, rc_c.out);
      write_run_manifest(sidecar(rc_c.out), "reconstruct", rc_c,
                         {{"checkpoint", rc_ckpt},
                          {"maps", rc_maps},
                          {"grid", rc_grid},
                          {"mode", mode},
                          {"iso", rc_iso}});
      std::cout << "wrote " << rc_c.out << " (" << mesh.face_count() << " faces)\n";
    } else if (ev->parsed()) {
      guard_output(ev_c);
      const json cj = load_config(ev_c);
      EvalOptions opt;
      opt.n_samples = cj.value("n_samples", opt.n_samples);
      opt.iou_resolution = cj.value("iou_resolution", opt.iou_resolution);
      opt.seed = cj.value("seed", opt.seed);
      if (ev_samples > 0) opt.n_samples = static_cast<std::size_t>(ev_samples);
      if (ev_iou_res > 0) opt.iou_resolution = ev_iou_res;
      if (ev_c.seed_given()) opt.seed = ev_c.seed;
      if (!ev_regions.empty()) {
        for (const auto& r : parse_json(read_file(ev_regions), ev_regions))
          opt.thin_regions.push_back((r.contains("box") ? r.at("box") : r).get<Aabb>());
      }
      const Camera cam = load_camera(ev_camera);
      const MetricsReport report =
          evaluate(load_mesh(ev_recon, false), load_mesh(ev_gt, false), cam, opt);
      write_json(ev_c.out, report);
      write_run_manifest(sidecar(ev_c.out), "eval", ev_c,
                         {{"recon", ev_recon},
                          {"gt", ev_gt},
                          {"camera", cam},
                          {"n_samples", opt.n_samples},
                          {"iou_resolution", opt.iou_resolution},
                          {"thin_regions", opt.thin_regions}});
      std::cout << json(report).dump() << "\n";
    } else if (gc->parsed()) {
      guard_output(gc_c);
      const auto checks = run_gradcheck_suite(gc_c.seed);
      json list = json::array();
      bool ok = true;
      for (const auto& c : checks) {
        ok = ok && c.passed;
        list.push_back({{"kernel", c.kernel},
                        {"max_rel_error", c.max_rel_error},
                        {"threshold", c.threshold},
                        {"coordinates", c.coordinates},
                        {"worst_tensor", c.worst_tensor},
                        {"passed", c.passed}});
        std::printf("%-28s %.3e < %.0e  %s\n", c.kernel.c_str(), c.max_rel_error, c.threshold,
                    c.passed ? "ok" : "FAIL");
      }
      write_json(gc_c.out, {{"passed", ok}, {"checks", list}});
      write_run_manifest(sidecar(gc_c.out), "gradcheck", gc_c, json::object());
      if (!ok) throw GradCheckFailed("at least one kernel exceeds its threshold");
    } else if (es->parsed() || eh->parsed()) {
      const bool sampling = es->parsed();
      Common& c = sampling ? es_c : eh_c;
      guard_output(c);
      ExperimentConfig cfg = load_config(c).get<ExperimentConfig>();
      const std::string& dataset = sampling ? es_dataset : eh_dataset;
      if (!dataset.empty()) cfg.dataset = dataset;
      if (c.seed_given()) cfg.seeds = {c.seed};
      const json report = sampling ? run_sampling_experiment(cfg, progress) : run_hri_experiment(cfg, progress);
      write_json(c.out, report);
      write_run_manifest(sidecar(c.out), sampling ? "experiment-sampling" : "experiment-hri", c, cfg);
      std::cout << report.at("verdict").dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "error: invalid JSON value: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
