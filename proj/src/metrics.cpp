#include "pifukit/metrics.hpp"

#include <cmath>
#include <unordered_map>

namespace pifukit {

double directed_sq_distance(const TriMesh& from, const TriMesh& to, std::size_t n, std::uint64_t seed) {
  if (from.empty() || to.empty()) throw EmptyMesh("distance metric needs two nonempty meshes");
  if (n == 0) throw ConfigError("distance metric needs at least one sample");
  const auto samples = sample_surface(from, n, salted(seed, StreamSalt::Metrics));
  const SurfaceDistanceIndex index(to);
  std::vector<double> d(n);
  parallel_for(n, 256, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d[i] = index.squared_distance(samples[i].point);
  });
  double sum = 0;
  for (double x : d) sum += x;
  return sum / static_cast<double>(n);
}

double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n, std::uint64_t seed) {
  return 0.5 * (directed_sq_distance(a, b, n, seed) + directed_sq_distance(b, a, n, seed));
}

double p2s(const TriMesh& recon, const TriMesh& gt, std::size_t n, std::uint64_t seed) {
  return directed_sq_distance(recon, gt, n, seed);
}

double normal_reprojection_error(const TriMesh& recon, const TriMesh& gt, const Camera& camera) {
  const NormalRender r = render_normals(recon, camera);
  const NormalRender g = render_normals(gt, camera);
  const int R = camera.resolution;
  double sum = 0;
  std::size_t count = 0;
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      const bool in_r = r.mask.at(x, y) > 0.5f, in_g = g.mask.at(x, y) > 0.5f;
      if (!in_r && !in_g) continue;
      ++count;
      if (in_r != in_g) {
        sum += 2;
        continue;
      }
      double sq = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(r.normal.at(x, y, c)) - g.normal.at(x, y, c);
        sq += d * d;
      }
      sum += std::sqrt(sq);
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double region_iou(const TriMesh& recon, const TriMesh& gt, const Aabb& box, int g) {
  const Vec3 ext = box.extent();
  if (box.empty() || !(ext.x > 0 && ext.y > 0 && ext.z > 0))
    throw DegenerateBox("region box must have positive extent on every axis");
  if (g < 1) throw ConfigError("region_iou needs G >= 1");
  std::vector<std::size_t> inter(static_cast<std::size_t>(g), 0), uni(static_cast<std::size_t>(g), 0);
  parallel_for(static_cast<std::size_t>(g), 1, [&](std::size_t kb, std::size_t ke) {
    for (std::size_t k = kb; k < ke; ++k)
      for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) {
          const Vec3 p{box.lo.x + (i + 0.5) * ext.x / g, box.lo.y + (j + 0.5) * ext.y / g,
                       box.lo.z + (static_cast<double>(k) + 0.5) * ext.z / g};
          const bool a = is_inside(recon, p), b = is_inside(gt, p);
          inter[k] += a && b;
          uni[k] += a || b;
        }
  });
  std::size_t i_total = 0, u_total = 0;
  for (std::size_t k = 0; k < inter.size(); ++k) {
    i_total += inter[k];
    u_total += uni[k];
  }
  return u_total ? static_cast<double>(i_total) / static_cast<double>(u_total) : 1.0;
}

double roughness(const TriMesh& mesh) {
  const auto& faces = mesh.faces();
  std::vector<Vec3> normals(faces.size());
  std::vector<bool> ok(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    ok[f] = mesh.face_area(f) > 0;
    if (ok[f]) normals[f] = mesh.face_normal(f);
  }
  // Undirected edge -> first face using it, then the angle once the second shows up.
  std::unordered_map<std::uint64_t, std::uint32_t> first;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = faces[f][k], b = faces[f][(k + 1) % 3];
      const std::uint64_t key = static_cast<std::uint64_t>(std::min(a, b)) << 32 | std::max(a, b);
      const auto [it, fresh] = first.try_emplace(key, static_cast<std::uint32_t>(f));
      if (fresh) continue;
      const std::uint32_t o = it->second;
      if (ok[f] && ok[o]) {
        const Vec3& n1 = normals[f];
        const Vec3& n2 = normals[o];
        sum += std::atan2(norm(cross(n1, n2)), dot(n1, n2));
        ++count;
      }
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

MetricsReport evaluate(const TriMesh& recon, const TriMesh& gt, const Camera& camera, const EvalOptions& options) {
  MetricsReport r;
  r.n_samples = options.n_samples;
  r.seed = options.seed;
  const double to_gt = directed_sq_distance(recon, gt, options.n_samples, options.seed);
  const double to_recon = directed_sq_distance(gt, recon, options.n_samples, options.seed);
  r.cd = 0.5 * (to_gt + to_recon);
  r.p2s = to_gt;
  r.normal_err = normal_reprojection_error(recon, gt, camera);
  r.roughness = roughness(recon);
  if (!options.thin_regions.empty()) {
    double sum = 0;
    for (const auto& box : options.thin_regions) sum += region_iou(recon, gt, box, options.iou_resolution);
    r.fin_iou = sum / static_cast<double>(options.thin_regions.size());
  }
  return r;
}

}  // namespace pifukit
