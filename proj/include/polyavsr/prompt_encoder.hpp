#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "polyavsr/model_config.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/tensor.hpp"

namespace polyavsr {

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// One learnable n×d prompt matrix per encoder layer. With n = 0 the
// matrices are absent (undefined tensors) but the layer count is kept.
struct PromptBank {
  std::vector<Tensor> prompts;
  std::size_t count = 0;  // n
  std::size_t width = 0;  // d

  std::size_t layers() const { return prompts.size(); }
};

// N(0, 0.02²) draws from a generator seeded with `seed`.
PromptBank init_prompt_bank(std::size_t n, std::size_t d, std::size_t layers, std::uint64_t seed,
                            DType dtype);

// e_av: final prompt outputs (first `prompt_rows` rows) followed by the
// final feature outputs.
struct PromptEmbedding {
  Tensor values;
  std::size_t prompt_rows = 0;
  std::size_t feature_rows = 0;

  Tensor features() const;
};

// Pre-norm transformer layer over [prompts; features].
class EncoderLayer {
 public:
  EncoderLayer(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t heads,
               std::size_t ff_mult);

  // prompt_in may be undefined (n = 0); prompt_out is then undefined too.
  std::pair<Tensor, Tensor> forward(const Tensor& prompt_in, const Tensor& feats_in) const;

 private:
  std::size_t d_, heads_;
  Tensor ln1_g_, ln1_b_, wqkv_, bqkv_, wo_, bo_;
  Tensor ln2_g_, ln2_b_, ff1_w_, ff1_b_, ff2_w_, ff2_b_;
};

class PromptEncoder {
 public:
  PromptEncoder(ParamStore& store, const ModelConfig& cfg);

  // Layer i consumes bank.prompts[i]; prompt outputs of layers before the
  // last are never read. The last layer's prompt output becomes the head of
  // e_av.
  PromptEmbedding encode_with_prompts(const Tensor& fused, const PromptBank& bank) const;
  // Plain transformer encoding without any prompt positions.
  Tensor encode(const Tensor& fused) const;

  const EncoderLayer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t depth() const { return layers_.size(); }
  // Adds the sinusoidal code to feature rows.
  Tensor add_positions(const Tensor& fused) const;
  Tensor final_norm(const Tensor& x) const;

 private:
  std::size_t d_;
  std::vector<EncoderLayer> layers_;
  Tensor norm_g_, norm_b_;
};

}  // namespace polyavsr
