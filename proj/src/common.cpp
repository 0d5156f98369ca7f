#include "pifukit/common.hpp"

#include <cstdlib>
#include <random>
#include <thread>

#ifndef PIFUKIT_VERSION
#define PIFUKIT_VERSION "unknown"
#endif

namespace pifukit {

Mat3 Mat3::rotation(const Vec3& axis, double angle) {
  const Vec3 k = normalized(axis);
  const double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  return {{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
           t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x,
           t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}};
}

double StreamRng::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(*this);
}

std::size_t thread_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PIFUKIT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
  }
  return hw;
}

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t workers = std::min(thread_count(), (n + grain - 1) / grain);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, w, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

const char* version_string() { return PIFUKIT_VERSION; }

}  // namespace pifukit
