#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pifukit/json_io.hpp"
#include "pifukit/metrics.hpp"
#include "pifukit/synthdata.hpp"

using namespace pifukit;

namespace {

// Closed surface of revolution about z, outward oriented. Longitudes sit half a
// step off the axes, and the second half of each ring is the exact negation of
// the first, so a 180 degree turn about z maps the vertex set onto itself.
TriMesh revolve(const std::vector<std::pair<double, double>>& profile, int segments) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  v.push_back({0, 0, profile.front().second});
  for (std::size_t r = 1; r + 1 < profile.size(); ++r) {
    const auto [rad, z] = profile[r];
    std::vector<Vec3> ring;
    for (int k = 0; k < segments / 2; ++k) {
      const double a = 2 * std::numbers::pi * (k + 0.5) / segments;
      ring.push_back({rad * std::cos(a), rad * std::sin(a), z});
    }
    for (int k = 0; k < segments / 2; ++k) ring.push_back({-ring[k].x, -ring[k].y, z});
    v.insert(v.end(), ring.begin(), ring.end());
  }
  v.push_back({0, 0, profile.back().second});
  const auto rings = static_cast<std::uint32_t>(profile.size() - 2);
  const auto n = static_cast<std::uint32_t>(segments);
  const auto at = [n](std::uint32_t ring, std::uint32_t k) { return 1 + ring * n + k % n; };
  const auto last = static_cast<std::uint32_t>(v.size() - 1);
  for (std::uint32_t k = 0; k < n; ++k) {
    f.push_back({0, at(0, k + 1), at(0, k)});
    for (std::uint32_t r = 0; r + 1 < rings; ++r) {
      f.push_back({at(r, k), at(r, k + 1), at(r + 1, k + 1)});
      f.push_back({at(r, k), at(r + 1, k + 1), at(r + 1, k)});
    }
    f.push_back({last, at(rings - 1, k), at(rings - 1, k + 1)});
  }
  TriMesh m(v, f);
  if (m.signed_volume() < 0) {
    for (auto& face : f) std::swap(face[1], face[2]);
    m = TriMesh(v, f);
  }
  return m;
}

TriMesh uv_sphere(double r, int rings, int segments) {
  std::vector<std::pair<double, double>> p;
  for (int j = 0; j <= rings; ++j) {
    const double t = std::numbers::pi * j / rings;
    p.push_back({r * std::sin(t), r * std::cos(t)});
  }
  return revolve(p, segments);
}

TriMesh z_cylinder(double r, double half, int segments) {
  return revolve({{0, half}, {r, half}, {r, -half}, {0, -half}}, segments);
}

TriMesh scaled(const TriMesh& m, double k) {
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p *= k;
  return TriMesh(v, m.faces(), m.face_part_labels());
}

// Per-pixel brute-force renderer: nearest front hit over every triangle.
double brute_normal_error(const TriMesh& a, const TriMesh& b, int R) {
  const double scale = R / 2.2;
  const auto nearest = [](const TriMesh& m, double x, double y) -> std::optional<Vec3> {
    double best = -1e300;
    std::optional<Vec3> n;
    for (std::size_t f = 0; f < m.face_count(); ++f) {
      const auto& F = m.faces()[f];
      const Vec3 p0 = m.vertices()[F[0]], p1 = m.vertices()[F[1]], p2 = m.vertices()[F[2]];
      const double d = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
      if (d == 0) continue;
      const double l1 = ((x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (y - p0.y)) / d;
      const double l2 = ((p1.x - p0.x) * (y - p0.y) - (x - p0.x) * (p1.y - p0.y)) / d;
      if (l1 < 0 || l2 < 0 || l1 + l2 > 1) continue;
      const double z = p0.z + l1 * (p1.z - p0.z) + l2 * (p2.z - p0.z);
      if (z > best) {
        best = z;
        n = normalized(cross(p1 - p0, p2 - p0));
      }
    }
    return n;
  };
  double sum = 0;
  int count = 0;
  for (int j = 0; j < R; ++j)
    for (int i = 0; i < R; ++i) {
      const double x = (i - R / 2) / scale, y = (R / 2 - j) / scale;
      const auto na = nearest(a, x, y), nb = nearest(b, x, y);
      if (!na && !nb) continue;
      ++count;
      if (!na || !nb) {
        sum += 2;
        continue;
      }
      const Vec3 fa{static_cast<float>(na->x), static_cast<float>(na->y), static_cast<float>(na->z)};
      const Vec3 fb{static_cast<float>(nb->x), static_cast<float>(nb->y), static_cast<float>(nb->z)};
      sum += norm(fa - fb);
    }
  return sum / count;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("identical meshes score zero") {
  const TriMesh m = icosphere(3, 0.7);
  CHECK(chamfer(m, m, 2000, 1) <= 1e-10);
  CHECK(p2s(m, m, 2000, 1) <= 1e-10);
  CHECK(normal_reprojection_error(m, m, Camera::with_default_scale(64, 0.4)) == 0.0);
  CHECK(region_iou(m, m, Aabb{{-1, -1, -1}, {1, 1, 1}}, 12) == 1.0);
}

TEST_CASE("concentric spheres give the squared gap") {
  const TriMesh outer = icosphere(5, 1.0), inner = icosphere(5, 0.9);
  CHECK(chamfer(outer, inner, 20000, 3) == doctest::Approx(0.01).epsilon(0.05));
  CHECK(p2s(inner, outer, 20000, 3) == doctest::Approx(0.01).epsilon(0.05));
  CHECK(chamfer(outer, inner, 5000, 9) == chamfer(inner, outer, 5000, 9));
}

TEST_CASE("a floating blob raises p2s above the gt-to-recon term") {
  const TriMesh gt = icosphere(3, 0.6);
  const TriMesh recon = merge({gt, icosphere(2, 0.1, {0.0, 0.9, 0.0})});
  const double to_recon = directed_sq_distance(gt, recon, 5000, 4);
  CHECK(to_recon <= 1e-10);
  CHECK(p2s(recon, gt, 5000, 4) > to_recon);
  CHECK(p2s(recon, gt, 5000, 4) > 1e-4);
}

TEST_CASE("normal error is zero for a 180 degree turn of a symmetric sphere") {
  const TriMesh s = uv_sphere(0.8, 12, 24);
  const TriMesh turned = transformed(s, Mat3{{-1, 0, 0, 0, -1, 0, 0, 0, 1}});
  const double e = normal_reprojection_error(turned, s, Camera::with_default_scale(64, 0.3));
  CHECK(e < 1e-6);
  CHECK(normal_reprojection_error(transformed(s, Mat3::rotation_z(0.1)), s, Camera::with_default_scale(64, 0.3)) > e);
}

TEST_CASE("normal error of sphere vs cylinder matches a brute-force renderer") {
  const TriMesh sphere = icosphere(3, 0.8);
  const TriMesh cyl = z_cylinder(0.8, 0.5, 64);
  const double e = normal_reprojection_error(cyl, sphere, Camera::with_default_scale(48));
  CHECK(e > 0.1);
  CHECK(e == doctest::Approx(brute_normal_error(cyl, sphere, 48)).epsilon(1e-6));
}

TEST_CASE("normal error counts one-sided silhouettes at 2") {
  const TriMesh big = icosphere(3, 0.8), none = icosphere(2, 0.1, {5, 5, 0});
  CHECK(normal_reprojection_error(none, big, Camera::with_default_scale(32)) == 2.0);
}

TEST_CASE("region_iou of a one-voxel dilation matches the voxel count") {
  const Vec3 half{0.31, 0.17, 0.24};
  const Aabb box{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  const int G = 20;
  const double h = 1.0 / G;
  const Vec3 dil = half + Vec3{h, h, h};
  const TriMesh gt = cuboid({}, half, Mat3{}, 0.1);
  const TriMesh recon = cuboid({}, dil, Mat3{}, 0.1);
  std::size_t in_gt = 0, in_recon = 0;
  for (int k = 0; k < G; ++k)
    for (int j = 0; j < G; ++j)
      for (int i = 0; i < G; ++i) {
        const Vec3 p{-0.5 + (i + 0.5) * h, -0.5 + (j + 0.5) * h, -0.5 + (k + 0.5) * h};
        in_gt += std::abs(p.x) < half.x && std::abs(p.y) < half.y && std::abs(p.z) < half.z;
        in_recon += std::abs(p.x) < dil.x && std::abs(p.y) < dil.y && std::abs(p.z) < dil.z;
      }
  REQUIRE(in_gt > 0);
  CHECK(region_iou(recon, gt, box, G) == static_cast<double>(in_gt) / static_cast<double>(in_recon));
  CHECK(region_iou(icosphere(2, 0.1, {3, 3, 3}), gt, Aabb{{-0.1, -0.1, -0.1}, {0.1, 0.1, 0.1}}, 8) == 0.0);
  CHECK_THROWS_AS(region_iou(gt, gt, Aabb{{0, 0, 0}, {1, 0, 1}}, 8), DegenerateBox);
  CHECK_THROWS_AS(region_iou(gt, gt, Aabb{}, 8), DegenerateBox);
}

TEST_CASE("roughness separates smooth, noisy and flat surfaces") {
  const TriMesh clean = icosphere(4, 1.0);
  CHECK(roughness(clean) < 0.25);
  std::vector<Vec3> v = clean.vertices();
  StreamRng rng(11, 0);
  for (auto& p : v) p *= 1.0 + 0.02 * (2 * rng.uniform() - 1);
  CHECK(roughness(TriMesh(v, clean.faces())) > roughness(clean));

  std::vector<Vec3> pv;
  std::vector<Face> pf;
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) pv.push_back({i * 0.1, j * 0.1, 0.3});
  for (std::uint32_t j = 0; j < 4; ++j)
    for (std::uint32_t i = 0; i < 4; ++i) {
      const std::uint32_t a = j * 5 + i;
      pf.push_back({a, a + 1, a + 6});
      pf.push_back({a, a + 6, a + 5});
    }
  CHECK(roughness(TriMesh(pv, pf)) == 0.0);
}

TEST_CASE("metrics are deterministic and stable across seeds") {
  const TriMesh a = icosphere(4, 0.8);
  std::vector<Vec3> v = a.vertices();
  for (auto& p : v) p.y *= 1.2;
  const TriMesh b(v, a.faces());
  CHECK(chamfer(a, b, 1000, 5) == chamfer(a, b, 1000, 5));
  std::vector<double> cds, p2ss;
  for (std::uint64_t s = 0; s < 5; ++s) {
    cds.push_back(chamfer(a, b, 100000, s));
    p2ss.push_back(p2s(b, a, 100000, s));
  }
  for (const auto* xs : {&cds, &p2ss}) {
    const auto [lo, hi] = std::minmax_element(xs->begin(), xs->end());
    CHECK((*hi - *lo) / *lo < 0.02);
  }
}

TEST_CASE("uniform scaling scales distances quadratically") {
  const TriMesh a = icosphere(3, 0.8);
  const TriMesh b = cuboid({0.05, 0, 0}, {0.6, 0.5, 0.55}, Mat3::rotation_y(0.3), 0.1);
  const double k = 0.5;
  const TriMesh ak = scaled(a, k), bk = scaled(b, k);
  CHECK(chamfer(ak, bk, 4000, 2) == doctest::Approx(k * k * chamfer(a, b, 4000, 2)).epsilon(1e-9));
  CHECK(p2s(ak, bk, 4000, 2) == doctest::Approx(k * k * p2s(a, b, 4000, 2)).epsilon(1e-9));
  Camera cam = Camera::with_default_scale(48, 0.2);
  Camera cam_k = cam;
  cam_k.scale /= k;
  CHECK(normal_reprojection_error(ak, bk, cam_k) == normal_reprojection_error(a, b, cam));
  const Aabb box{{-0.7, -0.6, -0.65}, {0.71, 0.62, 0.6}};
  const Aabb box_k{box.lo * k, box.hi * k};
  CHECK(region_iou(ak, bk, box_k, 10) == region_iou(a, b, box, 10));
}

TEST_CASE("evaluate fills a report that round-trips through JSON") {
  const TriMesh gt = icosphere(3, 0.7);
  const TriMesh recon = icosphere(3, 0.72);
  EvalOptions o;
  o.n_samples = 2000;
  o.seed = 8;
  o.thin_regions = {Aabb{{0.5, -0.2, -0.2}, {0.8, 0.2, 0.2}}};
  const MetricsReport r = evaluate(recon, gt, Camera::with_default_scale(48, 0.5), o);
  CHECK(r.cd == chamfer(recon, gt, 2000, 8));
  CHECK(r.p2s == p2s(recon, gt, 2000, 8));
  REQUIRE(r.fin_iou.has_value());
  CHECK(*r.fin_iou > 0.5);
  CHECK(r.roughness == roughness(recon));
  const nlohmann::json j = r;
  const auto back = j.get<MetricsReport>();
  CHECK(back.cd == r.cd);
  CHECK(back.fin_iou == r.fin_iou);
  CHECK(back.seed == 8);
  o.thin_regions.clear();
  CHECK(nlohmann::json(evaluate(recon, gt, Camera::with_default_scale(48, 0.5), o))["fin_iou"].is_null());
}

}
