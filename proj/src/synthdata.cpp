#include "pifukit/synthdata.hpp"

#include <map>
#include <numbers>

#include <json.hpp>

#include "pifukit/json_io.hpp"
#include "pifukit/maps.hpp"

namespace pifukit {

namespace {

const Mat3& generic_rotation() {
  static const Mat3 r = Mat3::rotation(normalized(Vec3{0.31, 0.77, 0.55}), 0.4137);
  return r;
}

// Rotation taking local +z onto `dir`.
Mat3 frame_for(const Vec3& dir) {
  const Vec3 w = normalized(dir);
  const Vec3 helper = std::abs(w.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 u = normalized(cross(helper, w));
  const Vec3 v = cross(w, u);
  return Mat3{{u.x, v.x, w.x, u.y, v.y, w.y, u.z, v.z, w.z}};
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::CapsuleFigure: return "capsule_figure";
    case ShapeKind::FinSphere: return "fin_sphere";
    case ShapeKind::WavyTest: return "wavy_test";
  }
  return "sphere";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::Sphere;
  if (name == "capsule_figure") return ShapeKind::CapsuleFigure;
  if (name == "fin_sphere") return ShapeKind::FinSphere;
  if (name == "wavy_test") return ShapeKind::WavyTest;
  throw InvalidSpec("unknown shape kind '" + name + "'");
}

void ShapeSpec::validate() const {
  if (level < 0 || level > 7) throw InvalidSpec("icosphere level must lie in [0, 7]");
  if (!(radius > 0 && radius <= 0.95)) throw InvalidSpec("radius must lie in (0, 0.95]");
  if (!(fin_thickness > 0)) throw InvalidSpec("fin_thickness must be positive");
  if (!(fin_extent > 0 && fin_extent <= 0.5)) throw InvalidSpec("fin_extent must lie in (0, 0.5]");
  if (!(finger_radius > 0 && finger_radius <= 0.03)) throw InvalidSpec("finger_radius must lie in (0, 0.03]");
  if (!(noise_amplitude >= 0 && noise_amplitude < radius / 4)) throw InvalidSpec("noise_amplitude out of range");
  if (max_edge < 0) throw InvalidSpec("max_edge must be non-negative");
  if (max_edge > 0 && fin_thickness < 2 * max_edge)
    throw InvalidSpec("fin thickness " + std::to_string(fin_thickness) + " is below twice the edge length " +
                      std::to_string(max_edge));
  if (kind == ShapeKind::FinSphere && radius + 0.02 + fin_extent > 0.95)
    throw InvalidSpec("fin_sphere does not fit the normalized volume; reduce radius or fin_extent");
}

std::vector<int> thin_part_labels(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::CapsuleFigure: {
      std::vector<int> labels;
      for (int l = 7; l <= 18; ++l) labels.push_back(l);
      return labels;
    }
    case ShapeKind::FinSphere: return {2};
    default: return {};
  }
}

TriMesh icosphere(int level, double radius, const Vec3& center, int label) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p = generic_rotation() * normalized(p);
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                         {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < level; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto [it, fresh] = mid.try_emplace({key.first, key.second}, 0);
      if (fresh) {
        it->second = static_cast<std::uint32_t>(v.size());
        v.push_back(normalized(v[a] + v[b]));
      }
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& [a, b, c] : f) {
      const auto ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  for (auto& p : v) p = center + p * radius;
  std::vector<int> labels(f.size(), label);
  return TriMesh(std::move(v), std::move(f), std::move(labels));
}

TriMesh capsule(const Vec3& a, const Vec3& b, double radius, int segments, int label, double twist) {
  if (segments < 3) throw InvalidSpec("capsule needs at least 3 segments");
  if (!(radius > 0)) throw InvalidSpec("capsule radius must be positive");
  const double length = norm(b - a);
  if (!(length > 0)) throw InvalidSpec("capsule axis has zero length");
  const int cap_rings = std::max(2, segments / 4);
  const double arc = 2 * std::numbers::pi * radius / segments;
  const int bands = std::max(1, static_cast<int>(std::ceil(length / arc)));

  // (z, ring radius) per latitude ring, bottom to top.
  std::vector<std::pair<double, double>> rings;
  for (int i = 1; i <= cap_rings; ++i) {
    const double phi = -std::numbers::pi / 2 + std::numbers::pi / 2 * i / cap_rings;
    rings.emplace_back(radius * std::sin(phi), radius * std::cos(phi));
  }
  for (int i = 1; i <= bands; ++i) rings.emplace_back(length * i / bands, radius);
  for (int i = 1; i < cap_rings; ++i) {
    const double phi = std::numbers::pi / 2 * i / cap_rings;
    rings.emplace_back(length + radius * std::sin(phi), radius * std::cos(phi));
  }

  std::vector<Vec3> v;
  v.push_back({0, 0, -radius});
  for (const auto& [z, rho] : rings)
    for (int j = 0; j < segments; ++j) {
      const double th = 2 * std::numbers::pi * j / segments + twist;
      v.push_back({rho * std::cos(th), rho * std::sin(th), z});
    }
  v.push_back({0, 0, length + radius});
  const auto top = static_cast<std::uint32_t>(v.size() - 1);
  const auto S = static_cast<std::uint32_t>(segments);
  auto at = [&](std::size_t ring, int j) { return static_cast<std::uint32_t>(1 + ring * S + (j % segments)); };

  std::vector<Face> f;
  for (int j = 0; j < segments; ++j) f.push_back({0, at(0, j + 1), at(0, j)});
  for (std::size_t r = 0; r + 1 < rings.size(); ++r)
    for (int j = 0; j < segments; ++j) {
      f.push_back({at(r, j), at(r, j + 1), at(r + 1, j + 1)});
      f.push_back({at(r, j), at(r + 1, j + 1), at(r + 1, j)});
    }
  const std::size_t last = rings.size() - 1;
  for (int j = 0; j < segments; ++j) f.push_back({at(last, j), at(last, j + 1), top});

  const Mat3 frame = frame_for(b - a);
  for (auto& p : v) p = a + frame * p;
  std::vector<int> labels(f.size(), label);
  return TriMesh(std::move(v), std::move(f), std::move(labels));
}

TriMesh cuboid(const Vec3& center, const Vec3& half, const Mat3& rotation, double max_edge, int label) {
  if (!(half.x > 0 && half.y > 0 && half.z > 0)) throw InvalidSpec("cuboid half extents must be positive");
  if (!(max_edge > 0)) throw InvalidSpec("cuboid max_edge must be positive");
  std::array<int, 3> n{};
  for (int k = 0; k < 3; ++k) n[k] = std::max(1, static_cast<int>(std::ceil(2 * half[k] / max_edge - 1e-9)));

  std::vector<Vec3> v;
  std::map<std::array<int, 3>, std::uint32_t> index;
  auto vertex = [&](std::array<int, 3> ijk) {
    auto [it, fresh] = index.try_emplace(ijk, 0);
    if (fresh) {
      it->second = static_cast<std::uint32_t>(v.size());
      Vec3 p;
      for (int k = 0; k < 3; ++k) p[k] = -half[k] + 2 * half[k] * ijk[k] / n[k];
      v.push_back(center + rotation * p);
    }
    return it->second;
  };

  std::vector<Face> f;
  for (int axis = 0; axis < 3; ++axis) {
    const int b = (axis + 1) % 3, c = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side)
      for (int i = 0; i < n[b]; ++i)
        for (int j = 0; j < n[c]; ++j) {
          auto corner = [&](int di, int dj) {
            std::array<int, 3> ijk{};
            ijk[axis] = side * n[axis];
            ijk[b] = i + di;
            ijk[c] = j + dj;
            return vertex(ijk);
          };
          const auto v00 = corner(0, 0), v10 = corner(1, 0), v11 = corner(1, 1), v01 = corner(0, 1);
          if (side == 1) {
            f.push_back({v00, v10, v11});
            f.push_back({v00, v11, v01});
          } else {
            f.push_back({v00, v11, v10});
            f.push_back({v00, v01, v11});
          }
        }
  }
  std::vector<int> labels(f.size(), label);
  return TriMesh(std::move(v), std::move(f), std::move(labels));
}

namespace {

TriMesh make_capsule_figure(const ShapeSpec& spec) {
  StreamRng rng(salted(spec.seed, StreamSalt::Shape), 0);
  auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  const double fin_edge = spec.max_edge > 0 ? spec.max_edge : spec.fin_thickness / 2;

  std::vector<TriMesh> parts;
  const double torso_r = 0.2 * jitter(0.96, 1.04);
  parts.push_back(capsule({0, -0.05, 0}, {0, 0.4, 0}, torso_r, 32, 1, 0.11));

  const double arm_y = 0.45 + jitter(-0.015, 0.015);
  const double arm_r = 0.05 * jitter(0.94, 1.06);
  const double arm_end = 0.62;
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    parts.push_back(capsule({s * 0.28, arm_y, 0}, {s * arm_end, arm_y, 0}, arm_r, 16, 2 + side, 0.07));
  }
  const double leg_r = 0.07 * jitter(0.94, 1.06);
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    parts.push_back(capsule({s * 0.1, -0.345, 0.0}, {s * 0.1, -0.86, 0.0}, leg_r, 20, 4 + side, 0.05));
  }
  const double head_r = 0.15 * jitter(0.96, 1.03);
  const Vec3 head_c{0, 0.78, 0};
  parts.push_back(icosphere(3, head_r, head_c, 6));

  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    const double tilt = s * jitter(0.26, 0.40);
    const Mat3 rot = Mat3::rotation_y(tilt) * Mat3::rotation_x(0.05);
    const Vec3 half{spec.fin_thickness / 2, 0.06, 0.04};
    parts.push_back(cuboid({s * (head_r + 0.045), head_c.y, 0}, half, rot, fin_edge, 7 + side));
  }

  const double finger_len = 0.15 * jitter(0.92, 1.05);
  const double fan = jitter(0.34, 0.44);  // total spread in radians
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    for (int k = 0; k < 5; ++k) {
      const double frac = (k - 2) / 2.0;
      const double ang = frac * fan / 2;
      const Vec3 base{s * (arm_end + arm_r + 0.04), arm_y + 0.09 * frac, 0.003 * k};
      const Vec3 dir{s * std::cos(ang), std::sin(ang), 0.02};
      parts.push_back(capsule(base, base + normalized(dir) * finger_len, spec.finger_radius, 10,
                              9 + 5 * side + k, 0.13 + 0.1 * k));
    }
  }
  return merge(parts);
}

TriMesh make_fin_sphere(const ShapeSpec& spec) {
  const double fin_edge = spec.max_edge > 0 ? spec.max_edge : spec.fin_thickness / 2;
  const TriMesh body = icosphere(spec.level, spec.radius, {}, 1);
  const double gap = 0.02;
  const Vec3 half{spec.fin_thickness / 2, spec.fin_extent / 2, spec.fin_extent / 2};
  const Vec3 center{0.0, 0.0, spec.radius + gap + spec.fin_extent / 2};
  const Mat3 rot = Mat3::rotation_y(0.05) * Mat3::rotation_z(0.03);
  return merge({body, cuboid(center, half, rot, fin_edge, 2)});
}

TriMesh make_wavy(const ShapeSpec& spec) {
  const TriMesh base = icosphere(spec.level, 1.0, {}, 1);
  std::vector<Vec3> v = base.vertices();
  const auto seed = salted(spec.seed, StreamSalt::Shape);
  for (std::size_t i = 0; i < v.size(); ++i) {
    StreamRng rng(seed, i);
    v[i] = v[i] * (spec.radius + spec.noise_amplitude * (2 * rng.uniform() - 1));
  }
  return TriMesh(std::move(v), base.faces(), base.face_part_labels());
}

}  // namespace

TriMesh make_shape(const ShapeSpec& spec) {
  spec.validate();
  TriMesh mesh;
  switch (spec.kind) {
    case ShapeKind::Sphere: mesh = icosphere(spec.level, spec.radius, {}, 1); break;
    case ShapeKind::CapsuleFigure: mesh = make_capsule_figure(spec); break;
    case ShapeKind::FinSphere: mesh = make_fin_sphere(spec); break;
    case ShapeKind::WavyTest: mesh = make_wavy(spec); break;
  }
  mesh.require_watertight();
  const Aabb& box = mesh.bbox();
  for (int k = 0; k < 3; ++k)
    if (box.lo[k] < -0.95 - 1e-9 || box.hi[k] > 0.95 + 1e-9)
      throw InvalidSpec(to_string(spec.kind) + " exceeds the normalized volume");
  return mesh;
}

// --- datasets --------------------------------------------------------------------

void DatasetConfig::validate() const {
  shape.validate();
  sampler.validate();
  if (n_meshes < 1) throw ConfigError("n_meshes must be positive");
  if (views_per_mesh < 1) throw ConfigError("views_per_mesh must be positive");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("test_fraction must lie in [0, 1)");
  Camera::with_default_scale(resolution).validate();
}

std::vector<const MeshEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const MeshEntry*> out;
  for (const auto& m : meshes)
    if (m.split == name) out.push_back(&m);
  return out;
}

namespace {

std::string mesh_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "mesh_%03d", i);
  return buf;
}

std::vector<ThinRegion> thin_regions(const TriMesh& mesh, ShapeKind kind) {
  std::vector<ThinRegion> out;
  for (int label : thin_part_labels(kind)) {
    Aabb box;
    for (std::size_t f = 0; f < mesh.face_count(); ++f) {
      if (mesh.face_part_labels()[f] != label) continue;
      for (auto vi : mesh.faces()[f]) box.expand(mesh.vertices()[vi]);
    }
    if (box.empty()) continue;
    box.lo -= Vec3{kThinRegionMargin, kThinRegionMargin, kThinRegionMargin};
    box.hi += Vec3{kThinRegionMargin, kThinRegionMargin, kThinRegionMargin};
    out.push_back({label, box});
  }
  return out;
}

MapStack render_with_recenter(TriMesh& mesh, const Camera& camera, int parse_classes) {
  try {
    return render_maps(mesh, camera, {parse_classes});
  } catch (const CenterMiss&) {
    mesh = transformed(mesh, Mat3{}, -mesh.bbox().center());
    return render_maps(mesh, camera, {parse_classes});
  }
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "meshes");
  fs::create_directories(out_dir / "maps");
  fs::create_directories(out_dir / "samples");

  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.version = version_string();

  std::vector<TriMesh> meshes;
  std::vector<ShapeSpec> specs;
  int max_label = 0;
  for (int i = 0; i < cfg.n_meshes; ++i) {
    ShapeSpec spec = cfg.shape;
    spec.seed = splitmix64(cfg.seed ^ (0x5eedULL + static_cast<std::uint64_t>(i)));
    meshes.push_back(make_shape(spec));
    specs.push_back(spec);
    for (int l : meshes.back().face_part_labels()) max_label = std::max(max_label, l);
  }
  manifest.parse_classes = max_label + 1;

  // Seeded shuffle; the last n_test ids form the test split.
  std::vector<int> order(cfg.n_meshes);
  for (int i = 0; i < cfg.n_meshes; ++i) order[i] = i;
  StreamRng shuffle_rng(salted(cfg.seed, StreamSalt::Shuffle), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const int n_test =
      cfg.n_meshes < 2 ? 0 : std::max(1, static_cast<int>(std::lround(cfg.test_fraction * cfg.n_meshes)));
  std::vector<bool> is_test(cfg.n_meshes, false);
  for (int k = cfg.n_meshes - n_test; k < cfg.n_meshes; ++k) is_test[order[k]] = true;

  for (int i = 0; i < cfg.n_meshes; ++i) {
    MeshEntry entry;
    entry.id = mesh_id(i);
    entry.split = is_test[i] ? "test" : "train";
    entry.spec = specs[i];
    TriMesh& mesh = meshes[i];

    for (int v = 0; v < cfg.views_per_mesh; ++v) {
      const double yaw = 2 * std::numbers::pi * v / cfg.views_per_mesh;
      const Camera camera = Camera::with_default_scale(cfg.resolution, yaw);
      const MapStack maps = render_with_recenter(mesh, camera, manifest.parse_classes);

      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_view%02d", entry.id.c_str(), v);
      ViewEntry view{yaw, std::string("maps/") + stem + ".f32m", std::string("samples/") + stem + "_spatial.bin",
                     std::string("samples/") + stem + "_dos.bin"};
      save_map_stack(out_dir / view.maps, maps);

      const TriMesh camera_mesh = transformed(mesh, camera.world_to_camera());
      SamplerConfig sc = cfg.sampler;
      sc.seed = splitmix64(cfg.seed ^ (static_cast<std::uint64_t>(i) << 20) ^ static_cast<std::uint64_t>(v));
      save_samples(out_dir / view.spatial_samples, spatial_samples(camera_mesh, sc), SamplingScheme::Spatial, sc);
      save_samples(out_dir / view.dos_samples, dos_samples(camera_mesh, sc), SamplingScheme::Dos, sc);
      entry.views.push_back(view);
    }
    entry.thin_regions = thin_regions(mesh, specs[i].kind);
    entry.mesh = "meshes/" + entry.id + ".obj";
    save_obj(mesh, out_dir / entry.mesh);
    manifest.meshes.push_back(std::move(entry));
  }
  save_manifest(manifest, out_dir);
  return manifest;
}

NLOHMANN_JSON_SERIALIZE_ENUM(ShapeKind, {{ShapeKind::Sphere, "sphere"},
                                         {ShapeKind::CapsuleFigure, "capsule_figure"},
                                         {ShapeKind::FinSphere, "fin_sphere"},
                                         {ShapeKind::WavyTest, "wavy_test"}})

void to_json(nlohmann::json& j, const ShapeSpec& s) {
  j = {{"kind", s.kind},
       {"level", s.level},
       {"radius", s.radius},
       {"fin_thickness", s.fin_thickness},
       {"fin_extent", s.fin_extent},
       {"finger_radius", s.finger_radius},
       {"noise_amplitude", s.noise_amplitude},
       {"max_edge", s.max_edge},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ShapeSpec& s) {
  ShapeSpec d;
  s.kind = j.contains("kind") ? parse_shape_kind(j.at("kind").get<std::string>()) : d.kind;
  s.level = j.value("level", d.level);
  s.radius = j.value("radius", d.radius);
  s.fin_thickness = j.value("fin_thickness", d.fin_thickness);
  s.fin_extent = j.value("fin_extent", d.fin_extent);
  s.finger_radius = j.value("finger_radius", d.finger_radius);
  s.noise_amplitude = j.value("noise_amplitude", d.noise_amplitude);
  s.max_edge = j.value("max_edge", d.max_edge);
  s.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"shape", c.shape},           {"n_meshes", c.n_meshes}, {"views_per_mesh", c.views_per_mesh},
       {"resolution", c.resolution}, {"test_fraction", c.test_fraction}, {"sampler", c.sampler},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  DatasetConfig d;
  c.shape = j.value("shape", d.shape);
  c.n_meshes = j.value("n_meshes", d.n_meshes);
  c.views_per_mesh = j.value("views_per_mesh", d.views_per_mesh);
  c.resolution = j.value("resolution", d.resolution);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.sampler = j.value("sampler", d.sampler);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ThinRegion& r) { j = {{"part_label", r.part_label}, {"box", r.box}}; }
void from_json(const nlohmann::json& j, ThinRegion& r) {
  r.part_label = j.at("part_label").get<int>();
  r.box = j.at("box").get<Aabb>();
}

void to_json(nlohmann::json& j, const ViewEntry& v) {
  j = {{"yaw", v.yaw}, {"maps", v.maps}, {"spatial_samples", v.spatial_samples}, {"dos_samples", v.dos_samples}};
}
void from_json(const nlohmann::json& j, ViewEntry& v) {
  v.yaw = j.at("yaw").get<double>();
  v.maps = j.at("maps").get<std::string>();
  v.spatial_samples = j.at("spatial_samples").get<std::string>();
  v.dos_samples = j.at("dos_samples").get<std::string>();
}

void to_json(nlohmann::json& j, const MeshEntry& m) {
  j = {{"id", m.id},     {"mesh", m.mesh},   {"split", m.split},
       {"spec", m.spec}, {"thin_regions", m.thin_regions}, {"views", m.views}};
}
void from_json(const nlohmann::json& j, MeshEntry& m) {
  m.id = j.at("id").get<std::string>();
  m.mesh = j.at("mesh").get<std::string>();
  m.split = j.at("split").get<std::string>();
  m.spec = j.at("spec").get<ShapeSpec>();
  m.thin_regions = j.at("thin_regions").get<std::vector<ThinRegion>>();
  m.views = j.at("views").get<std::vector<ViewEntry>>();
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dataset_dir) {
  nlohmann::json j;
  j["kind"] = "pifukit.dataset";
  j["version"] = manifest.version;
  j["config"] = manifest.config;
  j["parse_classes"] = manifest.parse_classes;
  j["meshes"] = manifest.meshes;
  write_file(dataset_dir / "manifest.json", j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
  const auto j = parse_json(read_file(dataset_dir / "manifest.json"), "dataset manifest");
  DatasetManifest m;
  try {
    m.version = j.value("version", std::string{});
    m.config = j.at("config").get<DatasetConfig>();
    m.parse_classes = j.at("parse_classes").get<int>();
    m.meshes = j.at("meshes").get<std::vector<MeshEntry>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid dataset manifest: ") + e.what());
  }
  return m;
}

}  // namespace pifukit
