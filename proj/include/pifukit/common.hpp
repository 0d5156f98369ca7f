#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pifukit {

// ---------------------------------------------------------------------------
// Errors. Every failure raised by the library derives from Error; the CLI maps
// the category onto its exit code.
// ---------------------------------------------------------------------------

enum class ErrorCategory { Validation, Numerical, Io };

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ErrorCategory category = ErrorCategory::Validation)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define PIFUKIT_DEFINE_ERROR(Name, Category)                                        \
  class Name : public Error {                                                       \
   public:                                                                          \
    explicit Name(const std::string& what) : Error(#Name ": " + what, Category) {} \
  };

PIFUKIT_DEFINE_ERROR(ParseError, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(NotWatertight, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(EmptyMesh, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(NoSurfaceOnRay, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(CenterMiss, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(ShapeMismatch, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(OutOfFrustum, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(EmptySurface, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(DegenerateBox, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(InvalidSpec, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(PreconditionError, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(ConfigError, ErrorCategory::Validation)
PIFUKIT_DEFINE_ERROR(DivergenceDetected, ErrorCategory::Numerical)
PIFUKIT_DEFINE_ERROR(GradCheckFailed, ErrorCategory::Numerical)
PIFUKIT_DEFINE_ERROR(IoError, ErrorCategory::Io)

#undef PIFUKIT_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Small fixed-size vector math.
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  return n > 0 ? v / n : Vec3{};
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
  return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
  return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

/// Row-major 3x3 matrix; only used for rigid rotations.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[3 * i + j] = m[3 * i] * o.m[j] + m[3 * i + 1] * o.m[3 + j] + m[3 * i + 2] * o.m[6 + j];
    return r;
  }
  Mat3 transposed() const { return {{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}}; }

  static Mat3 rotation_y(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {{c, 0, s, 0, 1, 0, -s, 0, c}};
  }
  static Mat3 rotation_x(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {{1, 0, 0, 0, c, -s, 0, s, c}};
  }
  static Mat3 rotation_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }
  /// Rotation by `angle` about unit `axis` (Rodrigues).
  static Mat3 rotation(const Vec3& axis, double angle);
};

struct Aabb {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};

  void expand(const Vec3& p) {
    lo = cwise_min(lo, p);
    hi = cwise_max(hi, p);
  }
  bool empty() const { return !(lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z); }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 extent() const { return hi - lo; }
};

// ---------------------------------------------------------------------------
// Counter-based random streams. A stream is addressed by (seed, index) so that
// per-item draws do not depend on iteration or thread schedule.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// SplitMix64 generator keyed by (seed, stream). Satisfies
/// UniformRandomBitGenerator so it composes with <random> distributions.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  StreamRng(std::uint64_t seed, std::uint64_t stream)
      : state_(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double normal();

 private:
  std::uint64_t state_;
};

/// Salts separating the random streams of different consumers sharing a seed.
enum class StreamSalt : std::uint64_t {
  SurfaceSample = 0x51,
  SpatialNoise = 0x52,
  SpatialUniform = 0x53,
  DosDisplace = 0x54,
  DosFarField = 0x55,
  Init = 0x56,
  Shuffle = 0x57,
  Shape = 0x58,
  Metrics = 0x59,
};

constexpr std::uint64_t salted(std::uint64_t seed, StreamSalt salt) {
  return splitmix64(seed ^ (static_cast<std::uint64_t>(salt) << 56));
}

// ---------------------------------------------------------------------------
// Parallelism. Work is split into fixed contiguous chunks; callers write into
// index-addressed slots so results never depend on scheduling.
// ---------------------------------------------------------------------------

/// Worker count: PIFUKIT_THREADS if set (>=1), else hardware concurrency.
std::size_t thread_count();

/// Invokes fn(begin, end) over [0, n) in contiguous chunks of at least `grain`.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

/// Version string baked in at configure time.
const char* version_string();

}  // namespace pifukit
