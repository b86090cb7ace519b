#pragma once

#include <span>

#include "polyavsr/classifier.hpp"
#include "polyavsr/decoder.hpp"
#include "polyavsr/decoding.hpp"
#include "polyavsr/frontends.hpp"
#include "polyavsr/model_config.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/prompt_encoder.hpp"

namespace polyavsr {

struct Encoded {
  PromptEmbedding e_av;
  Tensor ctc_logits;  // T×V over the feature rows
};

// Frontends, prompt encoder, classifier, decoder and CTC head over one
// parameter store. Prompt matrices are registered as `prompts.layer{i}`.
class AvsrModel {
 public:
  explicit AvsrModel(const ModelConfig& cfg);
  AvsrModel(const AvsrModel&) = delete;
  AvsrModel& operator=(const AvsrModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const PromptBank& prompts() const { return bank_; }
  const PromptEncoder& encoder() const { return encoder_; }
  LanguageClassifier& classifier() { return classifier_; }
  const TransformerDecoder& decoder() const { return decoder_; }

  // audio: S samples; video: frames×H×W×C values.
  Encoded encode(std::span<const float> audio, std::span<const float> video,
                 std::size_t frames) const;

  // Frontends and encoder weights stop receiving gradients; prompts,
  // classifier, decoder and CTC head keep training.
  void freeze_backbone(bool frozen);

 private:
  ModelConfig cfg_;
  ParamStore store_;
  AudioFront audio_;
  VisualFront visual_;
  Fusion fusion_;
  PromptEncoder encoder_;
  PromptBank bank_;
  LanguageClassifier classifier_;
  TransformerDecoder decoder_;
  CtcHead ctc_;
};

CtcPosteriors ctc_posteriors(const Tensor& ctc_logits);

}  // namespace polyavsr
