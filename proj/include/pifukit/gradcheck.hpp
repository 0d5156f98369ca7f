#pragma once

#include <string>
#include <vector>

#include "pifukit/tensor.hpp"

namespace pifukit {

struct KernelCheck {
  std::string kernel;
  double max_rel_error = 0;
  double threshold = 0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
  bool passed = false;
};

/// Gradient checks of every differentiable kernel and of the full model graph
/// in both fusion modes, all at 64-bit on seeded random inputs. Thresholds:
/// linear 1e-6, other kernels 1e-4, full graph 1e-3.
std::vector<KernelCheck> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace pifukit
