#pragma once

#include <random>
#include <vector>

#include "polyavsr/tensor.hpp"

namespace testing_util {

inline polyavsr::Tensor randn(const polyavsr::Shape& shape, std::mt19937_64& rng,
                              bool requires_grad = true,
                              polyavsr::DType dtype = polyavsr::DType::f64, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(polyavsr::shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return polyavsr::Tensor::from_data(shape, v, dtype, requires_grad);
}

inline std::vector<float> randn_f(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(d(rng));
  return v;
}

}  // namespace testing_util
