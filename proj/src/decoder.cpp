#include "polyavsr/decoder.hpp"

#include <cmath>
#include <string>

#include "polyavsr/ops.hpp"
#include "polyavsr/vocab.hpp"

namespace polyavsr {

TransformerDecoder::TransformerDecoder(ParamStore& store, const ModelConfig& cfg)
    : d_(cfg.d_model),
      heads_(cfg.decoder_heads),
      vocab_(cfg.vocab_size),
      num_languages_(cfg.num_languages) {
  const std::size_t d = d_, f = d_ * cfg.ff_mult;
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  const double bf = 1.0 / std::sqrt(static_cast<double>(f));
  embed_ = store.add_normal("decoder.embed", {vocab_, d}, 1.0);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    Layer L;
    L.ln1_g = store.add_constant(p + ".norm1.gain", {d}, 1.0);
    L.ln1_b = store.add_constant(p + ".norm1.bias", {d}, 0.0);
    L.self_wqkv = store.add_uniform(p + ".self_attn.wqkv", {d, 3 * d}, b);
    L.self_bqkv = store.add_constant(p + ".self_attn.bqkv", {3 * d}, 0.0);
    L.self_wo = store.add_uniform(p + ".self_attn.wo", {d, d}, b);
    L.self_bo = store.add_constant(p + ".self_attn.bo", {d}, 0.0);
    L.ln2_g = store.add_constant(p + ".norm2.gain", {d}, 1.0);
    L.ln2_b = store.add_constant(p + ".norm2.bias", {d}, 0.0);
    L.cross_wq = store.add_uniform(p + ".cross_attn.wq", {d, d}, b);
    L.cross_bq = store.add_constant(p + ".cross_attn.bq", {d}, 0.0);
    L.cross_wkv = store.add_uniform(p + ".cross_attn.wkv", {d, 2 * d}, b);
    L.cross_bkv = store.add_constant(p + ".cross_attn.bkv", {2 * d}, 0.0);
    L.cross_wo = store.add_uniform(p + ".cross_attn.wo", {d, d}, b);
    L.cross_bo = store.add_constant(p + ".cross_attn.bo", {d}, 0.0);
    L.ln3_g = store.add_constant(p + ".norm3.gain", {d}, 1.0);
    L.ln3_b = store.add_constant(p + ".norm3.bias", {d}, 0.0);
    L.ff1_w = store.add_uniform(p + ".ff.w1", {d, f}, b);
    L.ff1_b = store.add_constant(p + ".ff.b1", {f}, 0.0);
    L.ff2_w = store.add_uniform(p + ".ff.w2", {f, d}, bf);
    L.ff2_b = store.add_constant(p + ".ff.b2", {d}, 0.0);
    layers_.push_back(std::move(L));
  }
  norm_g_ = store.add_constant("decoder.final_norm.gain", {d}, 1.0);
  norm_b_ = store.add_constant("decoder.final_norm.bias", {d}, 0.0);
  out_w_ = store.add_uniform("decoder.out.weight", {d, vocab_}, b);
  out_b_ = store.add_constant("decoder.out.bias", {vocab_}, 0.0);
}

void TransformerDecoder::check_prefix(std::span<const int> prefix) const {
  const int first_lang = Vocab::kFirstLanguage;
  const int last_lang = first_lang + static_cast<int>(num_languages_);
  if (prefix.size() < 2 || prefix[0] != Vocab::kSos || prefix[1] < first_lang ||
      prefix[1] >= last_lang)
    throw ConditioningError("decoder prefix must start with <sos> followed by a language token");
}

Tensor TransformerDecoder::forward(std::span<const int> prefix, const Tensor& memory) const {
  check_prefix(prefix);
  if (memory.rank() != 2 || memory.dim(1) != d_)
    throw DimensionError("decoder: memory " + shape_str(memory.shape()) + " does not have width " +
                         std::to_string(d_));
  const std::size_t n = prefix.size();
  Tensor x = add_constant(embedding(embed_, prefix), sinusoidal_positions(n, d_));
  for (const auto& L : layers_) {
    Tensor h = linear(layer_norm(x, L.ln1_g, L.ln1_b), L.self_wqkv, L.self_bqkv);
    Tensor a = multi_head_attention(slice_cols(h, 0, d_), slice_cols(h, d_, d_),
                                    slice_cols(h, 2 * d_, d_), heads_, true);
    x = add(x, linear(a, L.self_wo, L.self_bo));

    Tensor q = linear(layer_norm(x, L.ln2_g, L.ln2_b), L.cross_wq, L.cross_bq);
    Tensor kv = linear(memory, L.cross_wkv, L.cross_bkv);
    Tensor c = multi_head_attention(q, slice_cols(kv, 0, d_), slice_cols(kv, d_, d_), heads_,
                                    false);
    x = add(x, linear(c, L.cross_wo, L.cross_bo));

    Tensor f = linear(relu(linear(layer_norm(x, L.ln3_g, L.ln3_b), L.ff1_w, L.ff1_b)), L.ff2_w,
                      L.ff2_b);
    x = add(x, f);
  }
  Tensor logits = linear(layer_norm(x, norm_g_, norm_b_), out_w_, out_b_);
  return log_softmax(logits, 1);
}

CtcHead::CtcHead(ParamStore& store, const ModelConfig& cfg) {
  const double b = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  w_ = store.add_uniform("ctc_head.weight", {cfg.d_model, cfg.vocab_size}, b);
  b_ = store.add_constant("ctc_head.bias", {cfg.vocab_size}, 0.0);
}

Tensor CtcHead::forward(const Tensor& features) const { return linear(features, w_, b_); }

}  // namespace polyavsr
