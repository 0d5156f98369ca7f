#pragma once

#include <optional>
#include <vector>

#include "pifukit/camera.hpp"
#include "pifukit/geometry.hpp"

namespace pifukit {

/// Mean squared distance from n area-weighted samples on `from` to surface `to`.
double directed_sq_distance(const TriMesh& from, const TriMesh& to, std::size_t n, std::uint64_t seed);

/// Symmetric Chamfer distance: average of both directed squared-distance means.
/// Both directions draw samples with the same seed, so chamfer(a, b) and
/// chamfer(b, a) are bit-identical.
double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n, std::uint64_t seed);

/// Point-to-surface: directed squared distance from recon samples to gt.
double p2s(const TriMesh& recon, const TriMesh& gt, std::size_t n, std::uint64_t seed);

/// Mean per-pixel L2 distance of camera-space normals over the union of both
/// silhouettes. Pixels covered by only one mesh score 2. Returns 0 when
/// neither mesh is visible.
double normal_reprojection_error(const TriMesh& recon, const TriMesh& gt, const Camera& camera);

/// Voxel IoU of both solids inside `box`, sampled at G^3 voxel centers.
/// Two empty solids give 1. Throws DegenerateBox for an empty or flat box.
double region_iou(const TriMesh& recon, const TriMesh& gt, const Aabb& box, int g);

/// Mean dihedral angle (radians) between the normals of faces sharing an
/// edge. Edges touching a zero-area face are skipped.
double roughness(const TriMesh& mesh);

struct MetricsReport {
  double cd = 0;
  double p2s = 0;
  double normal_err = 0;
  std::optional<double> fin_iou;
  double roughness = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  std::size_t n_samples = 100000;
  std::uint64_t seed = 0;
  int iou_resolution = 32;
  std::vector<Aabb> thin_regions;  // fin_iou is their mean IoU when nonempty
};

MetricsReport evaluate(const TriMesh& recon, const TriMesh& gt, const Camera& camera, const EvalOptions& options);

}  // namespace pifukit
