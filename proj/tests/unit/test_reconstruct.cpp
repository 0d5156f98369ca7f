#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pifukit/camera.hpp"
#include "pifukit/reconstruct.hpp"
#include "pifukit/synthdata.hpp"

using namespace pifukit;

namespace {

// Occupancy ramp one cell wide around a sphere of radius r.
OccupancyGrid sphere_ramp(int g, double r, const Vec3& c = {}) {
  const double h = 2.2 / (g - 1);
  return sample_grid(g, [&](const Vec3& p) { return std::clamp(0.5 - (norm(p - c) - r) / h, 0.0, 1.0); });
}

}  // namespace

TEST_SUITE("reconstruct") {

TEST_CASE("grid lattice spans the bounding cube") {
  const OccupancyGrid g(17);
  CHECK(g.spacing == doctest::Approx(2.2 / 16));
  CHECK(g.point(0, 0, 0).x == doctest::Approx(-1.1));
  CHECK(g.point(16, 16, 16).z == doctest::Approx(1.1));
  CHECK(norm(g.point(8, 8, 8)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(OccupancyGrid(1), ConfigError);
}

TEST_CASE("coarse and fine grids share lattice values") {
  const auto f = [](const Vec3& p) { return std::sin(3 * p.x) + p.y * p.z; };
  const auto coarse = sample_grid(17, f);
  const auto fine = sample_grid(33, f);
  for (int k = 0; k < 17; ++k)
    for (int j = 0; j < 17; ++j)
      for (int i = 0; i < 17; ++i) CHECK(coarse.at(i, j, k) == fine.at(2 * i, 2 * j, 2 * k));
}

TEST_CASE("sphere ramp reconstructs a closed outward sphere") {
  const auto grid = sphere_ramp(64, 0.8);
  const TriMesh mesh = marching_cubes(grid);
  CHECK(mesh.is_watertight());
  CHECK(mesh.is_consistently_oriented());
  CHECK(mesh.signed_volume() > 0);
  double err = 0;
  for (const auto& v : mesh.vertices()) err += std::abs(norm(v) - 0.8);
  err /= static_cast<double>(mesh.vertices().size());
  CHECK(err < 1.5 * grid.spacing);
  CHECK(mesh.signed_volume() == doctest::Approx(4.0 / 3.0 * std::numbers::pi * 0.512).epsilon(0.05));
}

TEST_CASE("inverting the field flips orientation") {
  auto grid = sphere_ramp(32, 0.6, {0.1, -0.05, 0.2});
  const double v = marching_cubes(grid).signed_volume();
  for (auto& x : grid.values) x = 1.0f - x;
  const TriMesh flipped = marching_cubes(grid);
  CHECK(flipped.signed_volume() == doctest::Approx(-v).epsilon(1e-9));
}

TEST_CASE("closing the boundary gives the complement in the capped box") {
  auto grid = sphere_ramp(32, 0.6, {0.1, -0.05, 0.2});
  const double v = marching_cubes(grid, 0.5, true).signed_volume();
  CHECK(v == doctest::Approx(marching_cubes(grid).signed_volume()).epsilon(1e-12));
  for (auto& x : grid.values) x = 1.0f - x;
  const TriMesh flipped = marching_cubes(grid, 0.5, true);
  OccupancyGrid full(32);
  std::fill(full.values.begin(), full.values.end(), 1.0f);
  CHECK(flipped.is_watertight());
  CHECK(flipped.signed_volume() ==
        doctest::Approx(marching_cubes(full, 0.5, true).signed_volume() - v).epsilon(1e-9));
}

TEST_CASE("ambiguous configurations stay watertight") {
  // Random values and a checkerboard exercise the saddle faces.
  StreamRng rng(5, 0);
  OccupancyGrid grid(20);
  for (int k = 1; k < 19; ++k)
    for (int j = 1; j < 19; ++j)
      for (int i = 1; i < 19; ++i) grid.at(i, j, k) = static_cast<float>(rng.uniform());
  const TriMesh mesh = marching_cubes(grid);
  CHECK(mesh.is_watertight());
  CHECK(mesh.is_consistently_oriented());
  CHECK(mesh.signed_volume() > 0);

  OccupancyGrid checker(12);
  for (int k = 2; k < 10; ++k)
    for (int j = 2; j < 10; ++j)
      for (int i = 2; i < 10; ++i) checker.at(i, j, k) = (i + j + k) % 2 ? 1.0f : 0.0f;
  const TriMesh cm = marching_cubes(checker);
  CHECK(cm.is_watertight());
  CHECK(cm.is_consistently_oriented());
}

TEST_CASE("constant grids have no surface") {
  OccupancyGrid g(8);
  CHECK_THROWS_AS(marching_cubes(g), EmptySurface);
  CHECK_THROWS_AS(marching_cubes(g, 0.5, true), EmptySurface);
  std::fill(g.values.begin(), g.values.end(), 1.0f);
  CHECK_THROWS_AS(marching_cubes(g), EmptySurface);
}

TEST_CASE("close_boundary caps inside values on the boundary") {
  OccupancyGrid full(8);
  std::fill(full.values.begin(), full.values.end(), 1.0f);
  const TriMesh box = marching_cubes(full, 0.5, true);
  CHECK(box.is_watertight());
  CHECK(box.is_consistently_oriented());
  CHECK(box.signed_volume() > std::pow(2.2, 3));
  CHECK(box.signed_volume() < std::pow(2.2 + full.spacing, 3));

  // Lower half space: the cut face closes at the grid walls.
  const OccupancyGrid half = sample_grid(16, [](const Vec3& p) { return p.z < 0.05 ? 1.0 : 0.0; });
  CHECK_FALSE(marching_cubes(half).is_watertight());
  const TriMesh slab = marching_cubes(half, 0.5, true);
  CHECK(slab.is_watertight());
  CHECK(slab.is_consistently_oriented());
  CHECK(slab.signed_volume() > 0);
}

TEST_CASE("eval_grid zeroes points outside the frustum") {
  ModelConfig c;
  c.r_low = 32;
  c.r_high = 64;
  c.c_feat = 8;
  c.backbone_width = 6;
  c.hri_width = 4;
  c.low_hidden = {16, 12, 8};
  c.high_hidden = {8, 6};
  const TriMesh sphere = icosphere(3, 0.7);
  const Camera cam = Camera::with_default_scale(64, std::numbers::pi / 4);
  const MapStack maps = render_maps(sphere, cam);
  c.parse_classes = maps.parse_classes;
  const Model<float> m(c);
  const auto features = m.encode(m.prepare(maps), QueryMode::Full);
  const auto grid = eval_grid(m, features, 16, QueryMode::Full);
  const Mat3 R = cam.world_to_camera();
  int outside = 0;
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) {
        const Vec3 p = grid.point(i, j, k);
        if (!in_frustum(cam, R * p)) {
          ++outside;
          CHECK(grid.at(i, j, k) == 0.0f);
        } else {
          const Vec3 q = p;
          CHECK(grid.at(i, j, k) == doctest::Approx(m.query(features, std::span(&q, 1), QueryMode::Full)[0]).epsilon(1e-6));
        }
      }
  CHECK(outside > 0);
  CHECK_THROWS_AS(eval_grid(m, features, 8, QueryMode::Full), ConfigError);
}

}
