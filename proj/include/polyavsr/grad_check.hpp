#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "polyavsr/tensor.hpp"

namespace polyavsr {

class DeterminismError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  // Where max_rel_error was found.
  std::size_t worst_param = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

// Compares autodiff gradients of `fn` with central differences
// (f(p+eps) - f(p-eps)) / 2eps. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-6 · max(1, |f|)). The floor grows with |f| so
// that finite-difference roundoff on a large loss is not counted as error.
// When `max_coords` is non-zero and smaller than the total parameter count,
// a seeded random subset is checked.
GradCheckResult grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                           double eps = 1e-5, std::size_t max_coords = 0,
                           std::uint64_t seed = 0);

}  // namespace polyavsr
