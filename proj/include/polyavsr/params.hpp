#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "polyavsr/optim.hpp"
#include "polyavsr/tensor.hpp"

namespace polyavsr {

// Named registry of every trainable parameter and persistent buffer of a
// model, in registration order. Names are dotted paths such as
// `encoder.layer3.attn.wqkv`; they are the checkpoint keys.
class ParamStore {
 public:
  ParamStore(DType dtype, std::uint64_t seed);

  DType dtype() const { return dtype_; }
  std::mt19937_64& rng() { return rng_; }

  Tensor add_normal(const std::string& name, const Shape& shape, double std);
  Tensor add_uniform(const std::string& name, const Shape& shape, double bound);
  Tensor add_constant(const std::string& name, const Shape& shape, double value);
  // Registers an existing tensor as a trainable parameter.
  Tensor adopt(const std::string& name, Tensor t);
  // Non-trainable state that still belongs in checkpoints.
  Tensor add_buffer(const std::string& name, const Shape& shape, double value);

  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }

  // Looks up a parameter or buffer; throws std::out_of_range if absent.
  Tensor find(std::string_view name) const;

  std::vector<NamedTensor> with_prefix(std::string_view prefix) const;
  std::vector<NamedTensor> trainable() const;
  void set_trainable(std::string_view prefix, bool trainable);
  void zero_grad();
  std::size_t count_values() const;

 private:
  void check_new(const std::string& name) const;

  DType dtype_;
  std::mt19937_64 rng_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

// Sinusoidal position code, rows × width, row-major.
std::vector<double> sinusoidal_positions(std::size_t rows, std::size_t width);

}  // namespace polyavsr
