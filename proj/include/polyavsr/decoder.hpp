#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "polyavsr/model_config.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/tensor.hpp"

namespace polyavsr {

class ConditioningError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Autoregressive transformer decoder conditioned on a language token and
// cross-attending over the whole e_av (prompt rows and feature rows).
class TransformerDecoder {
 public:
  TransformerDecoder(ParamStore& store, const ModelConfig& cfg);

  // prefix = [<sos>, <lang_k>, y1, ...]; returns |prefix|×V log-probabilities,
  // row i predicting the token after prefix[0..i].
  Tensor forward(std::span<const int> prefix, const Tensor& memory) const;

  std::size_t vocab_size() const { return vocab_; }

 private:
  struct Layer {
    Tensor ln1_g, ln1_b, self_wqkv, self_bqkv, self_wo, self_bo;
    Tensor ln2_g, ln2_b, cross_wq, cross_bq, cross_wkv, cross_bkv, cross_wo, cross_bo;
    Tensor ln3_g, ln3_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  void check_prefix(std::span<const int> prefix) const;

  std::size_t d_, heads_, vocab_, num_languages_;
  Tensor embed_;
  std::vector<Layer> layers_;
  Tensor norm_g_, norm_b_, out_w_, out_b_;
};

// Frame-synchronous projection of e_av feature rows onto the vocabulary.
class CtcHead {
 public:
  CtcHead(ParamStore& store, const ModelConfig& cfg);
  // features [T×d] -> logits [T×V]
  Tensor forward(const Tensor& features) const;

 private:
  Tensor w_, b_;
};

}  // namespace polyavsr
