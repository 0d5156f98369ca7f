#include "pifukit/sampling.hpp"

#include <json.hpp>

#include "pifukit/json_io.hpp"
#include "pifukit/maps.hpp"

namespace pifukit {

void SamplerConfig::validate() const {
  if (n_total == 0) throw ConfigError("n_total must be positive");
  if (ratio_surface <= 0 || ratio_uniform <= 0) throw ConfigError("sampling ratio components must be positive");
  if (!(sigma_spatial > 0) || !(sigma_dos > 0)) throw ConfigError("sigma values must be positive");
  if (!(c_saturation > 0)) throw ConfigError("c_saturation must be positive");
  if (!(dos_far_field_fraction >= 0 && dos_far_field_fraction < 1))
    throw ConfigError("dos_far_field_fraction must lie in [0, 1)");
}

namespace {

Vec3 clamp_to_volume(Vec3 p) {
  for (int k = 0; k < 3; ++k) p[k] = std::clamp(p[k], -kBoundingHalfExtent, kBoundingHalfExtent);
  return p;
}

Vec3 uniform_point(StreamRng& rng) {
  const double w = 2 * kBoundingHalfExtent;
  const double x = rng.uniform() * w - kBoundingHalfExtent;
  const double y = rng.uniform() * w - kBoundingHalfExtent;
  const double z = rng.uniform() * w - kBoundingHalfExtent;
  return {x, y, z};
}

}  // namespace

std::pair<std::size_t, std::size_t> spatial_split(const SamplerConfig& cfg) {
  const std::size_t n_surface =
      cfg.n_total * static_cast<std::size_t>(cfg.ratio_surface) / (cfg.ratio_surface + cfg.ratio_uniform);
  return {n_surface, cfg.n_total - n_surface};
}

std::vector<TrainingSample> spatial_samples(const TriMesh& mesh, const SamplerConfig& cfg) {
  cfg.validate();
  const std::size_t n_surface = spatial_split(cfg).first;
  const auto surface = sample_surface(mesh, n_surface, cfg.seed);
  const auto noise_seed = salted(cfg.seed, StreamSalt::SpatialNoise);
  const auto uniform_seed = salted(cfg.seed, StreamSalt::SpatialUniform);

  std::vector<TrainingSample> out(cfg.n_total);
  parallel_for(cfg.n_total, 2048, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Vec3 p;
      if (i < n_surface) {
        StreamRng rng(noise_seed, i);
        const double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        p = clamp_to_volume(surface[i].point + Vec3{dx, dy, dz} * cfg.sigma_spatial);
      } else {
        StreamRng rng(uniform_seed, i - n_surface);
        p = uniform_point(rng);
      }
      out[i] = {p, is_inside(mesh, p) ? 1.0 : 0.0, SamplingScheme::Spatial};
    }
  });
  return out;
}

Vec3 dos_displace(const Vec3& surface_point, double delta) {
  return {surface_point.x, surface_point.y, surface_point.z + delta};
}

Vec3 dos_displace(const Vec3& surface_point, double sigma_dos, StreamRng& rng) {
  const double magnitude = std::abs(rng.normal()) * sigma_dos;
  const bool forward = (rng() >> 63) != 0;
  return dos_displace(surface_point, forward ? magnitude : -magnitude);
}

double dos_label(double signed_distance, double c, LabelMap map) {
  if (map == LabelMap::Sigmoid) return 1.0 / (1.0 + std::exp(-2.0 * signed_distance / c));
  return std::clamp(0.5 + signed_distance / (2.0 * c), 0.0, 1.0);
}

std::vector<TrainingSample> dos_samples(const TriMesh& mesh, const SamplerConfig& cfg) {
  cfg.validate();
  const auto n_far = static_cast<std::size_t>(std::floor(cfg.n_total * cfg.dos_far_field_fraction));
  const std::size_t n_surface = cfg.n_total - n_far;
  const auto surface = sample_surface(mesh, n_surface, cfg.seed);
  const auto displace_seed = salted(cfg.seed, StreamSalt::DosDisplace);
  const auto far_seed = salted(cfg.seed, StreamSalt::DosFarField);

  std::vector<TrainingSample> out(cfg.n_total);
  parallel_for(cfg.n_total, 2048, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (i < n_surface) {
        StreamRng rng(displace_seed, i);
        Vec3 q = dos_displace(surface[i].point, cfg.sigma_dos, rng);
        q.z = std::clamp(q.z, -kBoundingHalfExtent, kBoundingHalfExtent);
        // The originating point lies on the line, so |s| never exceeds the
        // displacement. Ray casts miss it on vertical walls.
        const double along = std::abs(q.z - surface[i].point.z);
        double s = mesh.ray_hits_z(q.x, q.y).empty() ? -along : signed_z_distance(mesh, q);
        if (std::abs(s) > along) s = std::copysign(along, s);
        out[i] = {q, dos_label(s, cfg.c_saturation, cfg.label_map), SamplingScheme::Dos};
      } else {
        StreamRng rng(far_seed, i - n_surface);
        const Vec3 q = uniform_point(rng);
        const double label = mesh.ray_hits_z(q.x, q.y).empty()
                                 ? 0.0
                                 : dos_label(signed_z_distance(mesh, q), cfg.c_saturation, cfg.label_map);
        out[i] = {q, label, SamplingScheme::Dos};
      }
    }
  });
  return out;
}

std::string to_string(SamplingScheme scheme) { return scheme == SamplingScheme::Dos ? "dos" : "spatial"; }

SamplingScheme parse_scheme(const std::string& name) {
  if (name == "dos") return SamplingScheme::Dos;
  if (name == "spatial") return SamplingScheme::Spatial;
  throw ConfigError("unknown sampling scheme '" + name + "' (expected dos|spatial)");
}

std::string encode_samples(const std::vector<TrainingSample>& samples) {
  std::string out;
  out.reserve(samples.size() * 16);
  for (const auto& s : samples) {
    put_f32_le(out, static_cast<float>(s.point.x));
    put_f32_le(out, static_cast<float>(s.point.y));
    put_f32_le(out, static_cast<float>(s.point.z));
    put_f32_le(out, static_cast<float>(s.label));
  }
  return out;
}

std::vector<TrainingSample> decode_samples(const std::string& bytes, SamplingScheme scheme) {
  if (bytes.size() % 16 != 0) throw ParseError("sample file length is not a multiple of 16 bytes");
  std::vector<TrainingSample> out(bytes.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const char* p = bytes.data() + 16 * i;
    out[i].point = {get_f32_le(p), get_f32_le(p + 4), get_f32_le(p + 8)};
    out[i].label = get_f32_le(p + 12);
    out[i].scheme = scheme;
  }
  return out;
}

void save_samples(const std::filesystem::path& path, const std::vector<TrainingSample>& samples,
                  SamplingScheme scheme, const SamplerConfig& cfg) {
  write_file(path, encode_samples(samples));
  nlohmann::json side;
  side["scheme"] = to_string(scheme);
  side["count"] = samples.size();
  side["record"] = "f32le x, y, z, label";
  side["sampler"] = cfg;
  write_file(path.string() + ".json", side.dump(2) + "\n");
}

std::vector<TrainingSample> load_samples(const std::filesystem::path& path, SamplingScheme scheme) {
  return decode_samples(read_file(path), scheme);
}

}  // namespace pifukit
