#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "pifukit/common.hpp"

namespace pifukit {

using Face = std::array<std::uint32_t, 3>;

/// Intersection of the vertical line {(x, y, t)} with one mesh face.
struct ZHit {
  double t = 0;      // z coordinate of the crossing
  Vec3 normal;       // unit face normal
  std::uint32_t face_id = 0;
  int part_label = 0;
};

struct SurfaceSample {
  Vec3 point;
  Vec3 normal;
  int part_label = 0;
  std::uint32_t face_id = 0;
};

class ZRayIndex;

/// Indexed triangle mesh with per-face part labels. Immutable once built; the
/// (x, y) bucket index used by z-ray queries is constructed eagerly so that
/// every query is read-only and safe from any number of threads.
class TriMesh {
 public:
  TriMesh();
  /// Validates face indices and builds the z-ray index. Watertightness is not
  /// checked here (see require_watertight), so open meshes can be represented.
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<int> face_part_labels = {});

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<int>& face_part_labels() const { return labels_; }
  const Aabb& bbox() const { return bbox_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  Vec3 face_normal(std::size_t f) const;
  double face_area(std::size_t f) const;
  double surface_area() const;
  /// Signed enclosed volume; positive for outward-facing orientation.
  double signed_volume() const;

  /// Every undirected edge is used by exactly two faces.
  bool is_watertight() const;
  /// Every directed edge appears at most once (adjacent faces agree on winding).
  bool is_consistently_oriented() const;
  void require_watertight() const;

  /// All crossings of the vertical line through (x, y), sorted by t. Faces
  /// parallel to z never produce crossings. A line passing exactly through a
  /// shared edge or vertex is attributed to the lowest-index face containing it.
  std::vector<ZHit> ray_hits_z(double x, double y) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<int> labels_;
  Aabb bbox_;
  std::shared_ptr<const ZRayIndex> zindex_;
};

// --- queries -----------------------------------------------------------------

std::vector<ZHit> ray_hits_z(const TriMesh& mesh, double x, double y);

/// Parity of crossings strictly above p along +z. A line with odd total
/// crossing count (grazing an edge or silhouette) is nudged by +1e-7 in x.
bool is_inside(const TriMesh& mesh, const Vec3& p);

/// Signed distance along z to the nearest crossing of the vertical line
/// through p; positive inside. Throws NoSurfaceOnRay if the line misses.
double signed_z_distance(const TriMesh& mesh, const Vec3& p);

/// Area-weighted surface samples; sample i depends only on (seed, i).
std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

// --- construction and I/O ------------------------------------------------------

/// Reads the OBJ subset `v x y z`, `f i j k` (polygons are fan-split, `i/j/k`
/// tokens accepted) and `g part_<int>` part groups.
TriMesh load_mesh(const std::filesystem::path& path, bool normalize);
TriMesh parse_obj(const std::string& text);
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);
std::string to_obj(const TriMesh& mesh);

/// Translates the bbox midpoint to the origin and scales uniformly so the
/// largest half-extent is 0.95 (the [-1,1]^3 cube with a 5% margin).
TriMesh normalized(const TriMesh& mesh);
/// Applies p -> R p + t to every vertex.
TriMesh transformed(const TriMesh& mesh, const Mat3& rotation, const Vec3& translation = {});
/// Concatenates disjoint closed components into one mesh.
TriMesh merge(const std::vector<TriMesh>& parts);

// --- closest-point queries -------------------------------------------------------

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over a mesh answering exact point-to-surface
/// distance queries.
class SurfaceDistanceIndex {
 public:
  explicit SurfaceDistanceIndex(const TriMesh& mesh);
  double squared_distance(const Vec3& p) const;

 private:
  struct Node {
    Aabb box;
    std::uint32_t left = 0, right = 0;  // children when count == 0
    std::uint32_t first = 0, count = 0;  // leaf range into order_
  };
  std::uint32_t build(std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids);

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace pifukit
