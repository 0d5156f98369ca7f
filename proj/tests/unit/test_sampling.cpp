#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "pifukit/sampling.hpp"
#include "pifukit/synthdata.hpp"

using namespace pifukit;

namespace {

TriMesh fin_mesh() {
  ShapeSpec spec;
  spec.kind = ShapeKind::FinSphere;
  spec.radius = 0.6;
  return make_shape(spec);
}

}  // namespace

TEST_SUITE("sampling") {

TEST_CASE("config validation") {
  SamplerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.sigma_dos = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.ratio_uniform = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.c_saturation = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("spatial split honors 16:1") {
  SamplerConfig cfg;
  cfg.n_total = 1700;
  const auto [surface, uniform] = spatial_split(cfg);
  CHECK(surface == 1600);
  CHECK(uniform == 100);
}

TEST_CASE("spatial labels are the is_inside oracle") {
  const TriMesh m = icosphere(4, 0.8);
  SamplerConfig cfg;
  cfg.n_total = 10000;
  cfg.seed = 4;
  const auto s = spatial_samples(m, cfg);
  REQUIRE(s.size() == 10000);
  int mismatches = 0;
  for (const auto& x : s) {
    CHECK((x.label == 0.0 || x.label == 1.0));
    mismatches += (x.label == 1.0) != is_inside(m, x.point);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(x.point[k]) <= kBoundingHalfExtent);
  }
  CHECK(mismatches == 0);
  // Uniform tail covers the bounding volume, the head hugs the surface.
  const auto [n_surface, n_uniform] = spatial_split(cfg);
  double head = 0;
  for (std::size_t i = 0; i < n_surface; ++i) head += std::abs(norm(s[i].point) - 0.8);
  CHECK(head / static_cast<double>(n_surface) < 0.06);
  double far = 0;
  for (std::size_t i = n_surface; i < s.size(); ++i) far += norm(s[i].point) > 1.0;
  CHECK(far / static_cast<double>(n_uniform) > 0.3);
}

TEST_CASE("uniform sample at the origin is inside the sphere") {
  const TriMesh m = icosphere(3);
  CHECK(is_inside(m, {0, 0, 0}));
}

TEST_CASE("dos_displace moves along z only") {
  const Vec3 p{0.123456789, -0.987654321, 0.5};
  CHECK(dos_displace(p, 0.0) == p);
  StreamRng rng(1, 2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 q = dos_displace(p, 0.05, rng);
    CHECK(q.x == p.x);
    CHECK(q.y == p.y);
  }
}

TEST_CASE("dos displacement distribution") {
  const double sigma = 0.05;
  const int n = 100000;
  StreamRng rng(99, 0);
  double pos = 0, m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double d = dos_displace({0, 0, 0}, sigma, rng).z;
    pos += d > 0;
    m1 += std::abs(d);
    m2 += d * d;
  }
  CHECK(pos / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(m1 / n == doctest::Approx(sigma * std::sqrt(2.0 / std::numbers::pi)).epsilon(0.02));
  CHECK(m2 / n == doctest::Approx(sigma * sigma).epsilon(0.02));
}

TEST_CASE("dos_label anchors") {
  const double c = 0.05;
  CHECK(dos_label(0.0, c) == 0.5);
  CHECK(dos_label(2 * c, c) == 1.0);
  CHECK(dos_label(c, c) == 1.0);
  CHECK(dos_label(-c, c) == 0.0);
  CHECK(dos_label(-c / 2, c) == doctest::Approx(0.25));
  double prev = 0;
  for (double s = -0.2; s <= 0.2; s += 0.001) {
    const double l = dos_label(s, c);
    CHECK(l >= prev);
    prev = l;
  }
  CHECK(dos_label(0.0, c, LabelMap::Sigmoid) == 0.5);
  CHECK(dos_label(0.01, c, LabelMap::Sigmoid) > 0.5);
}

TEST_CASE("dos on the sphere: displaced pole point") {
  const TriMesh m = icosphere(5);
  const auto hits = ray_hits_z(m, 0, 0);
  const Vec3 q = dos_displace({0, 0, hits[1].t}, -0.1);
  const double s = signed_z_distance(m, q);
  CHECK(s == doctest::Approx(0.1));
  CHECK(dos_label(s, 0.05) == 1.0);
}

TEST_CASE("dos label in front of a thin slab is soft, not zero") {
  const TriMesh slab = cuboid({0, 0, 0}, {0.4, 0.4, 0.01}, Mat3{}, 0.1);
  const Vec3 q{0.013, 0.021, 0.01 + 0.04};
  CHECK(signed_z_distance(slab, q) == doctest::Approx(-0.04));
  CHECK(dos_label(signed_z_distance(slab, q), 0.05) == doctest::Approx(0.1));
}

TEST_CASE("dos samples on vertical walls stay bounded by the displacement") {
  const TriMesh slab = cuboid({0, 0, 0}, {0.4, 0.4, 0.01}, Mat3{}, 0.1);
  SamplerConfig cfg;
  cfg.n_total = 5000;
  cfg.seed = 3;
  std::vector<TrainingSample> s;
  REQUIRE_NOTHROW(s = dos_samples(slab, cfg));
  for (const auto& x : s) {
    CHECK(x.label >= 0.0);
    CHECK(x.label <= 1.0);
  }
}

TEST_CASE("dos samples match the composed oracle") {
  const TriMesh m = fin_mesh();
  SamplerConfig cfg;
  cfg.n_total = 10000;
  cfg.seed = 12;
  const auto s = dos_samples(m, cfg);
  int soft = 0;
  for (const auto& x : s) {
    const auto ts = oracle::brute_force_z_hits(m, x.point.x, x.point.y);
    const double ref = dos_label(oracle::signed_z_from_hits(ts, x.point.z), cfg.c_saturation);
    CHECK(std::abs(x.label - ref) <= 1e-6);
    CHECK(x.label >= 0.0);
    CHECK(x.label <= 1.0);
    soft += x.label > 0.1 && x.label < 0.9;
    const double sd = signed_z_distance(m, x.point);
    if (std::abs(sd) > 1e-6) CHECK((x.label > 0.5) == is_inside(m, x.point));
  }
  CHECK(soft >= 500);
}

TEST_CASE("zero displacement gives label one half") {
  const TriMesh m = fin_mesh();
  for (const auto& p : sample_surface(m, 500, 8))
    CHECK(dos_label(signed_z_distance(m, dos_displace(p.point, 0.0)), 0.05) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("same seed gives identical samples; file round trip") {
  const TriMesh m = fin_mesh();
  SamplerConfig cfg;
  cfg.n_total = 3000;
  cfg.seed = 77;
  const auto a = dos_samples(m, cfg);
  const auto b = dos_samples(m, cfg);
  CHECK(encode_samples(a) == encode_samples(b));
  const auto c = spatial_samples(m, cfg);
  CHECK(encode_samples(c) == encode_samples(spatial_samples(m, cfg)));
  cfg.seed = 78;
  CHECK(encode_samples(a) != encode_samples(dos_samples(m, cfg)));

  const auto dir = std::filesystem::temp_directory_path() / "pifukit_unit_sampling";
  std::filesystem::create_directories(dir);
  save_samples(dir / "s.bin", a, SamplingScheme::Dos, cfg);
  const auto back = load_samples(dir / "s.bin", SamplingScheme::Dos);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].point.x == static_cast<float>(a[i].point.x));
    CHECK(back[i].label == static_cast<float>(a[i].label));
  }
  CHECK(std::filesystem::exists(dir / "s.bin.json"));
  CHECK_THROWS_AS(decode_samples(std::string(15, '\0'), SamplingScheme::Dos), ParseError);
}

TEST_CASE("far-field flag adds uniform points") {
  const TriMesh m = fin_mesh();
  SamplerConfig cfg;
  cfg.n_total = 2000;
  cfg.dos_far_field_fraction = 0.25;
  const auto s = dos_samples(m, cfg);
  int zeros = 0;
  for (std::size_t i = 1500; i < s.size(); ++i) zeros += s[i].label == 0.0;
  CHECK(zeros > 100);
  CHECK(parse_scheme("dos") == SamplingScheme::Dos);
  CHECK_THROWS_AS(parse_scheme("grid"), ConfigError);
}

}  // TEST_SUITE
