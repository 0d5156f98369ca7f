#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pifukit/geometry.hpp"

namespace pifukit {

enum class SamplingScheme { Spatial, Dos };

/// How a signed z-distance is squashed into a soft occupancy label.
enum class LabelMap { Clamp, Sigmoid };

struct TrainingSample {
  Vec3 point;
  double label = 0;
  SamplingScheme scheme = SamplingScheme::Spatial;
};

struct SamplerConfig {
  std::size_t n_total = 100000;
  int ratio_surface = 16;  // perturbed-surface : uniform
  int ratio_uniform = 1;
  double sigma_spatial = 0.05;
  double sigma_dos = 0.05;
  double c_saturation = 0.05;
  std::uint64_t seed = 0;
  LabelMap label_map = LabelMap::Clamp;
  /// Fraction of DOS samples replaced by uniform far-field points (ablation
  /// only; 0 reproduces the plain scheme).
  double dos_far_field_fraction = 0.0;

  void validate() const;
};

/// Half-extent of the bounding volume samples are confined to.
inline constexpr double kBoundingHalfExtent = 1.1;

/// (perturbed-surface, uniform) counts; the floor goes to the surface share.
std::pair<std::size_t, std::size_t> spatial_split(const SamplerConfig& cfg);

/// Baseline scheme: Gaussian-perturbed surface points plus uniform points in
/// the bounding volume, split ratio_surface : ratio_uniform, labelled 1 inside
/// and 0 outside.
std::vector<TrainingSample> spatial_samples(const TriMesh& mesh, const SamplerConfig& cfg);

/// Moves a surface point along z only: p + (0, 0, delta).
Vec3 dos_displace(const Vec3& surface_point, double delta);
/// Draws delta = coin * |N(0, sigma)| from `rng` and applies it.
Vec3 dos_displace(const Vec3& surface_point, double sigma_dos, StreamRng& rng);

/// 0.5 on the surface, saturating to 1 at s >= c (inside) and 0 at s <= -c.
double dos_label(double signed_distance, double c, LabelMap map = LabelMap::Clamp);

/// Depth-oriented scheme: surface points displaced along z, labelled from the
/// true signed z-distance of the displaced point to the mesh.
std::vector<TrainingSample> dos_samples(const TriMesh& mesh, const SamplerConfig& cfg);

std::string to_string(SamplingScheme scheme);
SamplingScheme parse_scheme(const std::string& name);

/// Flat little-endian records (f32 x, y, z, label); `path`.json gets the config.
void save_samples(const std::filesystem::path& path, const std::vector<TrainingSample>& samples,
                  SamplingScheme scheme, const SamplerConfig& cfg);
std::vector<TrainingSample> load_samples(const std::filesystem::path& path, SamplingScheme scheme);
std::string encode_samples(const std::vector<TrainingSample>& samples);
std::vector<TrainingSample> decode_samples(const std::string& bytes, SamplingScheme scheme);

}  // namespace pifukit
