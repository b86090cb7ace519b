#include "polyavsr/params.hpp"

#include <cmath>
#include <stdexcept>

namespace polyavsr {

ParamStore::ParamStore(DType dtype, std::uint64_t seed) : dtype_(dtype), rng_(seed) {}

void ParamStore::check_new(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  for (const auto& b : buffers_)
    if (b.name == name) throw std::invalid_argument("duplicate buffer name '" + name + "'");
}

Tensor ParamStore::add_normal(const std::string& name, const Shape& shape, double std) {
  check_new(name);
  Tensor t = Tensor::zeros(shape, dtype_, true);
  std::normal_distribution<double> dist(0.0, std);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng_));
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_uniform(const std::string& name, const Shape& shape, double bound) {
  check_new(name);
  Tensor t = Tensor::zeros(shape, dtype_, true);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng_));
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_constant(const std::string& name, const Shape& shape, double value) {
  check_new(name);
  Tensor t = Tensor::zeros(shape, dtype_, true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, value);
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::adopt(const std::string& name, Tensor t) {
  check_new(name);
  if (t.dtype() != dtype_) throw ContractError("adopt: dtype mismatch for '" + name + "'");
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, const Shape& shape, double value) {
  check_new(name);
  Tensor t = Tensor::zeros(shape, dtype_, false);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, value);
  buffers_.push_back({name, t});
  return t;
}

Tensor ParamStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  for (const auto& b : buffers_)
    if (b.name == name) return b.tensor;
  throw std::out_of_range("no parameter or buffer named '" + std::string(name) + "'");
}

std::vector<NamedTensor> ParamStore::with_prefix(std::string_view prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_)
    if (std::string_view(p.name).starts_with(prefix)) out.push_back(p);
  return out;
}

std::vector<NamedTensor> ParamStore::trainable() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_)
    if (p.tensor.requires_grad()) out.push_back(p);
  return out;
}

void ParamStore::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& p : params_)
    if (std::string_view(p.name).starts_with(prefix)) p.tensor.set_requires_grad(trainable);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParamStore::count_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<double> sinusoidal_positions(std::size_t rows, std::size_t width) {
  std::vector<double> pe(rows * width);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < width; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double a = static_cast<double>(pos) * freq;
      pe[pos * width + i] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  return pe;
}

}  // namespace polyavsr
