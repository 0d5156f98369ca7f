#pragma once

#include <functional>
#include <vector>

#include "pifukit/geometry.hpp"
#include "pifukit/model.hpp"

namespace pifukit {

/// Scalar field on a G^3 lattice covering [-1.1, 1.1]^3 in world units.
/// Value (i, j, k) sits at origin + spacing * (i, j, k), stored x-fastest.
struct OccupancyGrid {
  int resolution = 0;
  Vec3 origin{-kBoundingHalfExtent, -kBoundingHalfExtent, -kBoundingHalfExtent};
  double spacing = 0;
  std::vector<float> values;

  OccupancyGrid() = default;
  explicit OccupancyGrid(int g);

  Vec3 point(int i, int j, int k) const {
    return origin + Vec3{spacing * i, spacing * j, spacing * k};
  }
  float& at(int i, int j, int k) { return values[index(i, j, k)]; }
  float at(int i, int j, int k) const { return values[index(i, j, k)]; }

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution + j) * resolution + i;
  }
};

/// Fills a grid from an arbitrary field f(world point).
OccupancyGrid sample_grid(int g, const std::function<double(const Vec3&)>& field);

/// Queries the model at every lattice point, one z slab per batch. Points
/// outside the camera frustum get 0.
OccupancyGrid eval_grid(const Model<float>& model, const ViewFeatures<float>& features, int g, QueryMode mode);

/// Isosurface at `iso` with values above it inside. Faces are oriented
/// outward (toward lower values). The mesh is open where inside values reach
/// the grid boundary unless close_boundary caps them with one extra layer at
/// iso - 1. Throws EmptySurface when no cell straddles iso.
TriMesh marching_cubes(const OccupancyGrid& grid, double iso = 0.5, bool close_boundary = false);

}  // namespace pifukit
