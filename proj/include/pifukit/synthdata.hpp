#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pifukit/camera.hpp"
#include "pifukit/geometry.hpp"
#include "pifukit/sampling.hpp"

namespace pifukit {

enum class ShapeKind { Sphere, CapsuleFigure, FinSphere, WavyTest };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

/// Procedural shape description. Every shape is built directly in normalized
/// units (inside [-0.95, 0.95]^3) from disjoint closed components.
///
/// Part labels:
///   sphere, wavy_test: 1
///   fin_sphere: sphere 1, fin 2
///   capsule_figure: torso 1, arms 2-3, legs 4-5, head 6, ears 7-8,
///                   fingers 9-13 (right hand) and 14-18 (left hand)
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Sphere;
  int level = 4;                  // icosphere subdivision level
  double radius = 0.8;            // sphere / wavy_test / fin_sphere body radius
  double fin_thickness = 0.02;    // ears and the fin_sphere fin
  double fin_extent = 0.3;        // fin_sphere fin edge length along y and z
  double finger_radius = 0.015;
  double noise_amplitude = 0.02;  // wavy_test radial noise
  double max_edge = 0;            // thin-plate edge bound; 0 picks fin_thickness / 2
  std::uint64_t seed = 0;         // per-instance proportions of capsule_figure

  void validate() const;
};

/// Part labels that make up the thin features of a shape kind.
std::vector<int> thin_part_labels(ShapeKind kind);

TriMesh make_shape(const ShapeSpec& spec);

// Primitives. All return closed, outward-oriented meshes carrying one label.

/// 10 * 4^level + 2 vertices.
TriMesh icosphere(int level, double radius = 1.0, const Vec3& center = {}, int label = 0);
/// Sphere-capped cylinder around segment a-b. `twist` rotates the ring seam.
TriMesh capsule(const Vec3& a, const Vec3& b, double radius, int segments, int label, double twist = 0.0);
/// Box with half extents `half`, rotated by `rotation` about its center, with
/// every edge no longer than `max_edge`.
TriMesh cuboid(const Vec3& center, const Vec3& half, const Mat3& rotation, double max_edge, int label = 0);

// --- datasets --------------------------------------------------------------------

struct DatasetConfig {
  ShapeSpec shape;          // seed is replaced per mesh
  int n_meshes = 10;
  int views_per_mesh = 10;
  int resolution = 256;
  double test_fraction = 0.2;
  SamplerConfig sampler;    // seed is replaced per view
  std::uint64_t seed = 0;

  void validate() const;
};

struct ThinRegion {
  int part_label = 0;
  Aabb box;
};

struct ViewEntry {
  double yaw = 0;
  std::string maps;             // F32MAP path relative to the dataset root
  std::string spatial_samples;  // camera-space samples, relative paths
  std::string dos_samples;
};

struct MeshEntry {
  std::string id;
  std::string mesh;  // OBJ path relative to the dataset root
  std::string split; // "train" or "test"
  ShapeSpec spec;
  std::vector<ThinRegion> thin_regions;  // world-space boxes around thin parts
  std::vector<ViewEntry> views;
};

struct DatasetManifest {
  DatasetConfig config;
  int parse_classes = 0;
  std::string version;
  std::vector<MeshEntry> meshes;

  std::vector<const MeshEntry*> split(const std::string& name) const;
};

/// Margin added around thin-part face bounds when recording regions.
inline constexpr double kThinRegionMargin = 0.03;

/// Generates meshes, renders `views_per_mesh` map stacks at yaws 2*pi*k/V,
/// writes spatial and DOS samples per view (camera space) and `manifest.json`.
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dataset_dir);

}  // namespace pifukit
