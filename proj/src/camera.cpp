#include "pifukit/camera.hpp"

#include <json.hpp>

#include "pifukit/json_io.hpp"

namespace pifukit {

Camera Camera::with_default_scale(int resolution, double yaw) {
  return Camera{yaw, resolution / 2.2, resolution};
}

void Camera::validate() const {
  if (resolution < 8 || resolution % 2 != 0)
    throw ConfigError("camera resolution must be even and >= 8, got " + std::to_string(resolution));
  if (!(scale > 0)) throw ConfigError("camera scale must be positive");
}

Projection project_camera_space(const Camera& camera, const Vec3& pc) {
  const double half = camera.resolution / 2.0;
  return {half + camera.scale * pc.x, half - camera.scale * pc.y, pc.z};
}

Projection project(const Camera& camera, const Vec3& p) {
  return project_camera_space(camera, camera.world_to_camera() * p);
}

namespace {

struct PixelHit {
  bool hit = false;
  ZHit nearest;
};

// Nearest surface along each pixel's ray, i.e. the crossing with largest z_cam.
std::vector<PixelHit> cast_pixels(const TriMesh& camera_mesh, const Camera& camera) {
  const int R = camera.resolution;
  const double half = R / 2.0;
  std::vector<PixelHit> out(static_cast<std::size_t>(R) * R);
  parallel_for(static_cast<std::size_t>(R), 4, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t row = r0; row < r1; ++row) {
      const double yc = (half - static_cast<double>(row)) / camera.scale;
      for (int col = 0; col < R; ++col) {
        const double xc = (static_cast<double>(col) - half) / camera.scale;
        const auto hits = camera_mesh.ray_hits_z(xc, yc);
        if (hits.empty()) continue;
        auto& px = out[row * R + col];
        px.hit = true;
        px.nearest = hits.back();
      }
    }
  });
  return out;
}

}  // namespace

MapStack render_maps(const TriMesh& mesh, const Camera& camera, const RenderOptions& options) {
  camera.validate();
  int max_label = 0;
  for (int l : mesh.face_part_labels()) max_label = std::max(max_label, l);
  const int K = options.parse_classes > 0 ? options.parse_classes : max_label + 1;
  if (K < 1) throw ConfigError("parse_classes must be positive");

  const TriMesh camera_mesh = transformed(mesh, camera.world_to_camera());
  const auto pixels = cast_pixels(camera_mesh, camera);
  const int R = camera.resolution;
  const auto& center = pixels[static_cast<std::size_t>(R / 2) * R + R / 2];
  if (!center.hit) throw CenterMiss("center pixel ray misses the mesh at yaw " + std::to_string(camera.yaw));
  const double reference = center.nearest.t;

  MapStack maps;
  maps.camera = camera;
  maps.parse_classes = K;
  maps.normal = Map2D(R, R, 3);
  maps.rel_depth = Map2D(R, R, 1);
  maps.parse = Map2D(R, R, K);
  maps.mask = Map2D(R, R, 1);
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      const auto& px = pixels[static_cast<std::size_t>(y) * R + x];
      if (!px.hit) {
        maps.parse.at(x, y, 0) = 1.0f;
        continue;
      }
      const Vec3 n = px.nearest.normal;
      maps.normal.at(x, y, 0) = static_cast<float>(n.x);
      maps.normal.at(x, y, 1) = static_cast<float>(n.y);
      maps.normal.at(x, y, 2) = static_cast<float>(n.z);
      maps.rel_depth.at(x, y) = static_cast<float>(px.nearest.t - reference);
      const int label = px.nearest.part_label;
      maps.parse.at(x, y, (label >= 1 && label < K) ? label : 0) = 1.0f;
      maps.mask.at(x, y) = 1.0f;
    }
  return maps;
}

NormalRender render_normals(const TriMesh& mesh, const Camera& camera) {
  camera.validate();
  const TriMesh camera_mesh = transformed(mesh, camera.world_to_camera());
  const auto pixels = cast_pixels(camera_mesh, camera);
  const int R = camera.resolution;
  NormalRender out{Map2D(R, R, 3), Map2D(R, R, 1)};
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      const auto& px = pixels[static_cast<std::size_t>(y) * R + x];
      if (!px.hit) continue;
      out.normal.at(x, y, 0) = static_cast<float>(px.nearest.normal.x);
      out.normal.at(x, y, 1) = static_cast<float>(px.nearest.normal.y);
      out.normal.at(x, y, 2) = static_cast<float>(px.nearest.normal.z);
      out.mask.at(x, y) = 1.0f;
    }
  return out;
}

Map2D center_indicator(int resolution) {
  if (resolution < 2 || resolution % 2 != 0) throw ConfigError("center_indicator needs an even resolution");
  Map2D map(resolution, resolution, 1);
  map.at(resolution / 2, resolution / 2) = 1.0f;
  return map;
}

Map2D pack_map_stack(const MapStack& maps) {
  const int R = maps.resolution();
  const int K = maps.parse_classes;
  Map2D packed(R, R, 3 + 1 + K + 1);
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      int c = 0;
      for (int k = 0; k < 3; ++k) packed.at(x, y, c++) = maps.normal.at(x, y, k);
      packed.at(x, y, c++) = maps.rel_depth.at(x, y);
      for (int k = 0; k < K; ++k) packed.at(x, y, c++) = maps.parse.at(x, y, k);
      packed.at(x, y, c++) = maps.mask.at(x, y);
    }
  return packed;
}

MapStack unpack_map_stack(const Map2D& packed, const Camera& camera, int parse_classes) {
  const int R = camera.resolution;
  if (packed.width != R || packed.height != R || packed.channels != 5 + parse_classes)
    throw ShapeMismatch("packed map stack does not match camera resolution / parse classes");
  MapStack maps;
  maps.camera = camera;
  maps.parse_classes = parse_classes;
  maps.normal = Map2D(R, R, 3);
  maps.rel_depth = Map2D(R, R, 1);
  maps.parse = Map2D(R, R, parse_classes);
  maps.mask = Map2D(R, R, 1);
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      int c = 0;
      for (int k = 0; k < 3; ++k) maps.normal.at(x, y, k) = packed.at(x, y, c++);
      maps.rel_depth.at(x, y) = packed.at(x, y, c++);
      for (int k = 0; k < parse_classes; ++k) maps.parse.at(x, y, k) = packed.at(x, y, c++);
      maps.mask.at(x, y) = packed.at(x, y, c++);
    }
  return maps;
}

void save_map_stack(const std::filesystem::path& path, const MapStack& maps) {
  write_f32map(path, pack_map_stack(maps));
  nlohmann::json side;
  side["camera"] = maps.camera;
  side["parse_classes"] = maps.parse_classes;
  side["layout"] = {"normal:3", "rel_depth:1", "parse:" + std::to_string(maps.parse_classes), "mask:1"};
  write_file(path.string() + ".json", side.dump(2) + "\n");
}

MapStack load_map_stack(const std::filesystem::path& path) {
  const auto side = nlohmann::json::parse(read_file(path.string() + ".json"));
  const auto camera = side.at("camera").get<Camera>();
  return unpack_map_stack(read_f32map(path), camera, side.at("parse_classes").get<int>());
}

}  // namespace pifukit
