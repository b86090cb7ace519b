#include "polyavsr/model.hpp"

#include <string>

#include "polyavsr/ops.hpp"

namespace polyavsr {

namespace {

PromptBank adopt_prompts(ParamStore& store, const ModelConfig& cfg) {
  // Own stream so n does not shift the initialization of later modules.
  PromptBank bank = init_prompt_bank(cfg.prompt_count, cfg.d_model, cfg.encoder_layers,
                                     cfg.seed * 7919 + 17, cfg.dtype);
  for (std::size_t i = 0; i < bank.layers(); ++i)
    if (bank.prompts[i].defined())
      bank.prompts[i] = store.adopt("prompts.layer" + std::to_string(i), bank.prompts[i]);
  return bank;
}

Tensor to_tensor(std::span<const float> v, const Shape& shape, DType dtype) {
  if (shape_numel(shape) != v.size())
    throw DimensionError("model input of " + std::to_string(v.size()) + " values does not fit " +
                         shape_str(shape));
  Tensor t = Tensor::zeros(shape, dtype);
  dispatch(dtype, [&](auto zero) {
    using R = decltype(zero);
    auto out = t.data<R>();
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<R>(v[i]);
  });
  return t;
}

}  // namespace

AvsrModel::AvsrModel(const ModelConfig& cfg)
    : cfg_(cfg),
      store_(cfg.dtype, cfg.seed),
      audio_(store_, cfg),
      visual_(store_, cfg),
      fusion_(store_, cfg),
      encoder_(store_, cfg),
      bank_(adopt_prompts(store_, cfg)),
      classifier_(store_, cfg),
      decoder_(store_, cfg),
      ctc_(store_, cfg) {}

Encoded AvsrModel::encode(std::span<const float> audio, std::span<const float> video,
                          std::size_t frames) const {
  const Tensor a = to_tensor(audio, {audio.size()}, cfg_.dtype);
  const Tensor v = to_tensor(
      video, {frames, cfg_.frame_height, cfg_.frame_width, cfg_.frame_channels}, cfg_.dtype);
  const Tensor fused = fusion_.forward(audio_.forward(a), visual_.forward(v));
  Encoded out;
  out.e_av = encoder_.encode_with_prompts(fused, bank_);
  out.ctc_logits = ctc_.forward(out.e_av.features());
  return out;
}

void AvsrModel::freeze_backbone(bool frozen) {
  for (const char* prefix : {"audio_front.", "visual_front.", "fusion.", "encoder."})
    store_.set_trainable(prefix, !frozen);
}

CtcPosteriors ctc_posteriors(const Tensor& ctc_logits) {
  NoGradGuard guard;
  const Tensor lp = log_softmax(ctc_logits, 1);
  return {lp.to_vector(), lp.dim(0), lp.dim(1)};
}

}  // namespace polyavsr
