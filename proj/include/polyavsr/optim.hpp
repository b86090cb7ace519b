#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polyavsr/tensor.hpp"

namespace polyavsr {

class IncompleteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Adaptive-moment optimizer. Moments are kept in double regardless of the
// parameter dtype.
class Adam {
 public:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };

  Adam(std::vector<NamedTensor> params, AdamConfig config = {});

  // Throws IncompleteGradientError if any registered parameter has no
  // gradient buffer (backward never reached it).
  void step();
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Slot> slots_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace polyavsr
