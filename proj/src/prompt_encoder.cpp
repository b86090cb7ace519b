#include "polyavsr/prompt_encoder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "polyavsr/ops.hpp"

namespace polyavsr {

PromptBank init_prompt_bank(std::size_t n, std::size_t d, std::size_t layers, std::uint64_t seed,
                            DType dtype) {
  if (layers < 1) throw ConfigurationError("prompt bank needs at least one layer");
  PromptBank bank;
  bank.count = n;
  bank.width = d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  for (std::size_t l = 0; l < layers; ++l) {
    if (n == 0) {
      bank.prompts.emplace_back();
      continue;
    }
    Tensor p = Tensor::zeros({n, d}, dtype, true);
    for (std::size_t i = 0; i < p.numel(); ++i) p.set(i, dist(rng));
    bank.prompts.push_back(p);
  }
  return bank;
}

Tensor PromptEmbedding::features() const {
  return prompt_rows == 0 ? values : slice_rows(values, prompt_rows, feature_rows);
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& prefix, std::size_t d,
                           std::size_t heads, std::size_t ff_mult)
    : d_(d), heads_(heads) {
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  const double bf = 1.0 / std::sqrt(static_cast<double>(d * ff_mult));
  ln1_g_ = store.add_constant(prefix + ".norm1.gain", {d}, 1.0);
  ln1_b_ = store.add_constant(prefix + ".norm1.bias", {d}, 0.0);
  wqkv_ = store.add_uniform(prefix + ".attn.wqkv", {d, 3 * d}, b);
  bqkv_ = store.add_constant(prefix + ".attn.bqkv", {3 * d}, 0.0);
  wo_ = store.add_uniform(prefix + ".attn.wo", {d, d}, b);
  bo_ = store.add_constant(prefix + ".attn.bo", {d}, 0.0);
  ln2_g_ = store.add_constant(prefix + ".norm2.gain", {d}, 1.0);
  ln2_b_ = store.add_constant(prefix + ".norm2.bias", {d}, 0.0);
  ff1_w_ = store.add_uniform(prefix + ".ff.w1", {d, d * ff_mult}, b);
  ff1_b_ = store.add_constant(prefix + ".ff.b1", {d * ff_mult}, 0.0);
  ff2_w_ = store.add_uniform(prefix + ".ff.w2", {d * ff_mult, d}, bf);
  ff2_b_ = store.add_constant(prefix + ".ff.b2", {d}, 0.0);
}

std::pair<Tensor, Tensor> EncoderLayer::forward(const Tensor& prompt_in,
                                                const Tensor& feats_in) const {
  if (feats_in.rank() != 2 || feats_in.dim(1) != d_)
    throw DimensionError("encoder_layer: features " + shape_str(feats_in.shape()) +
                         " do not have width " + std::to_string(d_));
  const bool has_prompts = prompt_in.defined();
  if (has_prompts && (prompt_in.rank() != 2 || prompt_in.dim(1) != d_))
    throw DimensionError("encoder_layer: prompts " + shape_str(prompt_in.shape()) +
                         " do not have width " + std::to_string(d_));
  const std::size_t n = has_prompts ? prompt_in.dim(0) : 0;
  const std::size_t T = feats_in.dim(0);

  Tensor x = has_prompts ? concat_rows({prompt_in, feats_in}) : feats_in;
  Tensor h = linear(layer_norm(x, ln1_g_, ln1_b_), wqkv_, bqkv_);
  Tensor attn = multi_head_attention(slice_cols(h, 0, d_), slice_cols(h, d_, d_),
                                     slice_cols(h, 2 * d_, d_), heads_, false);
  x = add(x, linear(attn, wo_, bo_));
  Tensor f = linear(relu(linear(layer_norm(x, ln2_g_, ln2_b_), ff1_w_, ff1_b_)), ff2_w_, ff2_b_);
  x = add(x, f);

  if (!has_prompts) return {Tensor{}, x};
  return {slice_rows(x, 0, n), slice_rows(x, n, T)};
}

PromptEncoder::PromptEncoder(ParamStore& store, const ModelConfig& cfg) : d_(cfg.d_model) {
  if (cfg.encoder_layers < 1) throw ConfigurationError("encoder needs at least one layer");
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
    layers_.emplace_back(store, "encoder.layer" + std::to_string(i), cfg.d_model,
                         cfg.encoder_heads, cfg.ff_mult);
  norm_g_ = store.add_constant("encoder.final_norm.gain", {cfg.d_model}, 1.0);
  norm_b_ = store.add_constant("encoder.final_norm.bias", {cfg.d_model}, 0.0);
}

Tensor PromptEncoder::add_positions(const Tensor& fused) const {
  if (fused.rank() != 2 || fused.dim(1) != d_)
    throw DimensionError("encoder: fused features " + shape_str(fused.shape()) +
                         " do not have width " + std::to_string(d_));
  const auto pe = sinusoidal_positions(fused.dim(0), d_);
  return add_constant(fused, pe);
}

Tensor PromptEncoder::final_norm(const Tensor& x) const { return layer_norm(x, norm_g_, norm_b_); }

PromptEmbedding PromptEncoder::encode_with_prompts(const Tensor& fused,
                                                   const PromptBank& bank) const {
  if (bank.layers() != layers_.size())
    throw ConfigurationError("prompt bank has " + std::to_string(bank.layers()) +
                             " layers but the encoder has " + std::to_string(layers_.size()));
  Tensor feats = add_positions(fused);
  Tensor prompt_out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto [p, f] = layers_[i].forward(bank.prompts[i], feats);
    feats = f;
    prompt_out = p;  // only the last assignment survives
  }
  PromptEmbedding e;
  e.prompt_rows = bank.count;
  e.feature_rows = feats.dim(0);
  e.values = final_norm(bank.count == 0 ? feats : concat_rows({prompt_out, feats}));
  return e;
}

Tensor PromptEncoder::encode(const Tensor& fused) const {
  Tensor feats = add_positions(fused);
  for (const auto& layer : layers_) feats = layer.forward(Tensor{}, feats).second;
  return final_norm(feats);
}

}  // namespace polyavsr
