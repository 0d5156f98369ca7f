#include "pifukit/reconstruct.hpp"

#include <stdexcept>
#include <unordered_map>

namespace pifukit {

OccupancyGrid::OccupancyGrid(int g)
    : resolution(g), spacing(2 * kBoundingHalfExtent / (g - 1)), values(static_cast<std::size_t>(g) * g * g, 0.0f) {
  if (g < 2) throw ConfigError("grid resolution must be at least 2");
}

OccupancyGrid sample_grid(int g, const std::function<double(const Vec3&)>& field) {
  OccupancyGrid grid(g);
  parallel_for(static_cast<std::size_t>(g), 1, [&](std::size_t kb, std::size_t ke) {
    for (int k = static_cast<int>(kb); k < static_cast<int>(ke); ++k)
      for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) grid.at(i, j, k) = static_cast<float>(field(grid.point(i, j, k)));
  });
  return grid;
}

OccupancyGrid eval_grid(const Model<float>& model, const ViewFeatures<float>& features, int g, QueryMode mode) {
  if (g < 16) throw ConfigError("eval_grid needs G >= 16, got " + std::to_string(g));
  OccupancyGrid grid(g);
  const Mat3 R = features.camera.world_to_camera();
  std::vector<Vec3> pts;
  std::vector<std::size_t> slot;
  for (int k = 0; k < g; ++k) {
    pts.clear();
    slot.clear();
    for (int j = 0; j < g; ++j)
      for (int i = 0; i < g; ++i) {
        const Vec3 pc = R * grid.point(i, j, k);
        if (!in_frustum(features.camera, pc)) continue;
        pts.push_back(pc);
        slot.push_back((static_cast<std::size_t>(k) * g + j) * g + i);
      }
    if (pts.empty()) continue;
    const auto v = model.query_camera_space(features, pts, mode);
    for (std::size_t n = 0; n < v.size(); ++n) grid.values[slot[n]] = static_cast<float>(v[n]);
  }
  return grid;
}

namespace {

// Triangulates a polygon of crossing edges without any diagonal between two
// edges on a common cube face; such a diagonal would duplicate a segment of
// the neighbouring cube. Triangles keep the loop's winding reversed, so
// normals point toward lower values.
bool triangulate(const std::vector<int>& loop, const std::array<unsigned, 12>& on_face,
                 std::vector<std::array<int, 3>>& out) {
  const std::size_t n = loop.size();
  if (n < 3) return n == 0;
  if (n == 3) {
    out.push_back({loop[0], loop[2], loop[1]});
    return true;
  }
  // Ear at index 1 of the rotation starting at r, cutting diagonal (r, r + 2).
  for (std::size_t r = 0; r < n; ++r) {
    const int a = loop[r], b = loop[(r + 1) % n], c = loop[(r + 2) % n];
    if (on_face[a] & on_face[c]) continue;
    std::vector<int> rest;
    for (std::size_t k = 0; k < n; ++k)
      if (k != (r + 1) % n) rest.push_back(loop[k]);
    const std::size_t mark = out.size();
    out.push_back({a, c, b});
    if (triangulate(rest, on_face, out)) return true;
    out.resize(mark);
  }
  return false;
}

struct CubeEdge {
  int c0, c1, axis;
};

// Triangles per corner configuration, as triples of cube edge indices.
struct CaseTable {
  std::array<CubeEdge, 12> edges{};
  std::array<std::vector<std::array<int, 3>>, 256> tris;

  CaseTable() {
    int e = 0;
    std::array<std::array<int, 8>, 8> edge_of{};
    for (auto& row : edge_of) row.fill(-1);
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 8; ++c)
        if (!(c >> a & 1)) {
          edges[e] = {c, c | 1 << a, a};
          edge_of[c][c | 1 << a] = edge_of[c | 1 << a][c] = e;
          ++e;
        }
    // Faces with corners counter-clockwise seen from outside the cube.
    std::vector<std::array<int, 4>> faces;
    std::array<unsigned, 12> on_face{};
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, d = (a + 2) % 3;
      for (int s = 0; s < 2; ++s) {
        std::array<int, 4> q{};
        const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
        for (int n = 0; n < 4; ++n) q[n] = s << a | uv[n][0] << b | uv[n][1] << d;
        if (s == 0) std::swap(q[1], q[3]);
        for (int n = 0; n < 4; ++n) on_face[edge_of[q[n]][q[(n + 1) % 4]]] |= 1u << faces.size();
        faces.push_back(q);
      }
    }
    for (int mask = 0; mask < 256; ++mask) {
      // Each maximal run of inside corners along a face boundary yields one
      // segment from its exit crossing to its entry crossing. Diagonal inside
      // corners form separate runs, which fixes the ambiguous faces the same
      // way from both neighbouring cubes.
      std::array<int, 12> next;
      next.fill(-1);
      for (const auto& q : faces) {
        bool in[4];
        for (int n = 0; n < 4; ++n) in[n] = mask >> q[n] & 1;
        for (int n = 0; n < 4; ++n) {
          const int prev = (n + 3) % 4;
          if (!in[n] || in[prev]) continue;  // n starts a run
          int last = n;
          while (in[(last + 1) % 4]) last = (last + 1) % 4;
          const int entry = edge_of[q[prev]][q[n]];
          const int exit = edge_of[q[last]][q[(last + 1) % 4]];
          next[exit] = entry;
        }
      }
      std::array<bool, 12> used{};
      for (int start = 0; start < 12; ++start) {
        if (next[start] < 0 || used[start]) continue;
        std::vector<int> loop;
        for (int x = start; !used[x]; x = next[x]) {
          used[x] = true;
          loop.push_back(x);
        }
        if (!triangulate(loop, on_face, tris[mask]))
          throw std::logic_error("marching cubes table: no valid triangulation");
      }
    }
  }
};

const CaseTable& case_table() {
  static const CaseTable table;
  return table;
}

}  // namespace

namespace {

bool boundary_inside(const OccupancyGrid& grid, double iso) {
  const int last = grid.resolution - 1;
  for (int k = 0; k <= last; ++k)
    for (int j = 0; j <= last; ++j)
      for (int i = 0; i <= last; ++i) {
        if (i > 0 && i < last && j > 0 && j < last && k > 0 && k < last) i = last;
        if (grid.at(i, j, k) > iso) return true;
      }
  return false;
}

// One extra layer of `fill` on every side, same spacing.
OccupancyGrid padded(const OccupancyGrid& grid, float fill) {
  OccupancyGrid out;
  out.resolution = grid.resolution + 2;
  out.spacing = grid.spacing;
  out.origin = grid.origin - Vec3{grid.spacing, grid.spacing, grid.spacing};
  out.values.assign(static_cast<std::size_t>(out.resolution) * out.resolution * out.resolution, fill);
  for (int k = 0; k < grid.resolution; ++k)
    for (int j = 0; j < grid.resolution; ++j)
      for (int i = 0; i < grid.resolution; ++i) out.at(i + 1, j + 1, k + 1) = grid.at(i, j, k);
  return out;
}

}  // namespace

TriMesh marching_cubes(const OccupancyGrid& grid, double iso, bool close_boundary) {
  if (close_boundary && boundary_inside(grid, iso))
    return marching_cubes(padded(grid, static_cast<float>(iso - 1)), iso);
  const int G = grid.resolution;
  const CaseTable& table = case_table();
  const auto gid = [G](int i, int j, int k, int axis) {
    return ((static_cast<std::uint64_t>(k) * G + j) * G + i) * 3 + axis;
  };

  std::vector<std::vector<std::array<std::uint64_t, 3>>> slabs(static_cast<std::size_t>(G - 1));
  parallel_for(slabs.size(), 1, [&](std::size_t kb, std::size_t ke) {
    for (int k = static_cast<int>(kb); k < static_cast<int>(ke); ++k)
      for (int j = 0; j + 1 < G; ++j)
        for (int i = 0; i + 1 < G; ++i) {
          int mask = 0;
          for (int c = 0; c < 8; ++c)
            if (grid.at(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)) > iso) mask |= 1 << c;
          for (const auto& t : table.tris[mask]) {
            std::array<std::uint64_t, 3> tri{};
            for (int n = 0; n < 3; ++n) {
              const CubeEdge& e = table.edges[t[n]];
              tri[n] = gid(i + (e.c0 & 1), j + (e.c0 >> 1 & 1), k + (e.c0 >> 2 & 1), e.axis);
            }
            slabs[k].push_back(tri);
          }
        }
  });

  std::unordered_map<std::uint64_t, std::uint32_t> index;
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  for (const auto& slab : slabs)
    for (const auto& tri : slab) {
      Face f{};
      for (int n = 0; n < 3; ++n) {
        const auto [it, fresh] = index.try_emplace(tri[n], static_cast<std::uint32_t>(verts.size()));
        if (fresh) {
          const int axis = static_cast<int>(tri[n] % 3);
          const std::uint64_t cell = tri[n] / 3;
          const int i = static_cast<int>(cell % G), j = static_cast<int>(cell / G % G), k = static_cast<int>(cell / G / G);
          const int i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
          const double v0 = grid.at(i, j, k), v1 = grid.at(i1, j1, k1);
          const double t = (iso - v0) / (v1 - v0);
          const Vec3 p0 = grid.point(i, j, k), p1 = grid.point(i1, j1, k1);
          verts.push_back(p0 + (p1 - p0) * t);
        }
        f[n] = it->second;
      }
      faces.push_back(f);
    }
  if (faces.empty()) throw EmptySurface("no grid cell straddles iso level " + std::to_string(iso));
  return TriMesh(std::move(verts), std::move(faces));
}

}  // namespace pifukit
