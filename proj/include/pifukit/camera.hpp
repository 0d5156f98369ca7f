#pragma once

#include <filesystem>

#include "pifukit/geometry.hpp"
#include "pifukit/maps.hpp"

namespace pifukit {

/// Weak-perspective camera orbiting the world y axis. Camera space has +z
/// pointing toward the viewer; image v grows downward; pixel (i, j) has its
/// center at (u, v) = (i, j), so the principal point is pixel (R/2, R/2).
struct Camera {
  double yaw = 0.0;    // radians about world +y
  double scale = 0.0;  // pixels per world unit
  int resolution = 256;

  /// Scale R/2.2 maps the [-1.1, 1.1] bounding volume onto the full image.
  static Camera with_default_scale(int resolution, double yaw = 0.0);
  void validate() const;
  Mat3 world_to_camera() const { return Mat3::rotation_y(-yaw); }
  Mat3 camera_to_world() const { return Mat3::rotation_y(yaw); }
  bool operator==(const Camera&) const = default;
};

struct Projection {
  double u = 0, v = 0, z_cam = 0;
};

Projection project(const Camera& camera, const Vec3& p);
/// Projection of a point already expressed in camera space.
Projection project_camera_space(const Camera& camera, const Vec3& pc);

/// Conditioning maps rendered from one camera.
///  - normal: camera-space unit normals (3 ch), 0 on background
///  - rel_depth: z_cam of the nearest surface minus z_cam at the center pixel
///    (farther surfaces are negative), 0 on background
///  - parse: one-hot over `parse_classes` channels; channel 0 is background
///    (unlabeled faces also land there), part label L maps to channel L
///  - mask: 1 where the pixel ray hits the mesh
struct MapStack {
  Camera camera;
  int parse_classes = 0;
  Map2D normal, rel_depth, parse, mask;

  int resolution() const { return camera.resolution; }
};

struct RenderOptions {
  int parse_classes = 0;  // 0: one past the largest part label in the mesh
};

/// Casts one camera-space z ray per pixel. Throws CenterMiss when the center
/// pixel's ray misses, since the depth reference is then undefined.
MapStack render_maps(const TriMesh& mesh, const Camera& camera, const RenderOptions& options = {});

struct NormalRender {
  Map2D normal;  // 3 channels
  Map2D mask;    // 1 channel
};

/// Normal and mask only; no depth reference is needed so a center miss is fine.
NormalRender render_normals(const TriMesh& mesh, const Camera& camera);

/// Zeros everywhere except 1 at pixel (R/2, R/2).
Map2D center_indicator(int resolution);

/// Stacks normal | rel_depth | parse | mask into one map of 3 + 1 + K + 1 channels.
Map2D pack_map_stack(const MapStack& maps);
MapStack unpack_map_stack(const Map2D& packed, const Camera& camera, int parse_classes);

/// Writes `path` (F32MAP, packed channels) and `path`.json (camera and layout).
void save_map_stack(const std::filesystem::path& path, const MapStack& maps);
MapStack load_map_stack(const std::filesystem::path& path);

}  // namespace pifukit
