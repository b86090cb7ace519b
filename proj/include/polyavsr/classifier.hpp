#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyavsr/model_config.hpp"
#include "polyavsr/ops.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/prompt_encoder.hpp"

namespace polyavsr {

class LabelError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct LanguageLabel {
  int id = 0;
  std::string code() const { return "L" + std::to_string(id); }
};

// Language classifier over the full e_av: four [conv1d(k=3) -> batch norm
// -> ReLU] blocks over the sequence axis, global average pooling, then
// linear -> ReLU -> linear to m logits.
class LanguageClassifier {
 public:
  static constexpr std::size_t kBlocks = 4;

  LanguageClassifier(ParamStore& store, const ModelConfig& cfg);

  // One [1×m] logit row per input. In train mode the batch statistics span
  // every position of every input.
  std::vector<Tensor> classify_batch(const std::vector<Tensor>& e_avs, NormMode mode);
  Tensor classify(const Tensor& e_av, NormMode mode = NormMode::eval);

 private:
  std::size_t d_, m_;
  std::vector<Tensor> conv_w_, bn_g_, bn_b_;
  std::vector<RunningStats> stats_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// −log softmax(logits)[gt]
Tensor class_loss(const Tensor& logits, LanguageLabel gt);

// argmax, lowest id on ties.
LanguageLabel predict_language(std::span<const double> logits);
LanguageLabel predict_language(const Tensor& logits);

}  // namespace polyavsr
