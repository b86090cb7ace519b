#include "polyavsr/classifier.hpp"

#include <cmath>

namespace polyavsr {

LanguageClassifier::LanguageClassifier(ParamStore& store, const ModelConfig& cfg)
    : d_(cfg.d_model), m_(cfg.num_languages) {
  const double b = 1.0 / std::sqrt(static_cast<double>(3 * d_));
  for (std::size_t i = 0; i < kBlocks; ++i) {
    const std::string p = "classifier.block" + std::to_string(i);
    conv_w_.push_back(store.add_uniform(p + ".conv.weight", {d_, d_, 3}, b));
    bn_g_.push_back(store.add_constant(p + ".bn.gain", {d_}, 1.0));
    bn_b_.push_back(store.add_constant(p + ".bn.bias", {d_}, 0.0));
    stats_.push_back({store.add_buffer(p + ".bn.running_mean", {d_}, 0.0),
                      store.add_buffer(p + ".bn.running_var", {d_}, 1.0), 0.1});
  }
  const double bl = 1.0 / std::sqrt(static_cast<double>(d_));
  fc1_w_ = store.add_uniform("classifier.fc1.weight", {d_, d_}, bl);
  fc1_b_ = store.add_constant("classifier.fc1.bias", {d_}, 0.0);
  fc2_w_ = store.add_uniform("classifier.fc2.weight", {d_, m_}, bl);
  fc2_b_ = store.add_constant("classifier.fc2.bias", {m_}, 0.0);
}

std::vector<Tensor> LanguageClassifier::classify_batch(const std::vector<Tensor>& e_avs,
                                                       NormMode mode) {
  std::vector<Tensor> xs;
  std::vector<std::size_t> lengths;
  for (const auto& e : e_avs) {
    if (e.rank() != 2 || e.dim(1) != d_)
      throw DimensionError("classify: e_av " + shape_str(e.shape()) + " does not have width " +
                           std::to_string(d_));
    xs.push_back(transpose(e));  // d × (n+T)
    lengths.push_back(e.dim(0));
  }
  for (std::size_t blk = 0; blk < kBlocks; ++blk) {
    std::vector<Tensor> conv;
    for (const auto& x : xs) conv.push_back(conv1d(x, conv_w_[blk], Tensor{}, 1, 1));
    Tensor joined = conv.size() == 1 ? conv[0] : concat_cols(conv);
    Tensor normed = relu(batch_norm1d(joined, bn_g_[blk], bn_b_[blk], stats_[blk], mode));
    if (conv.size() == 1) {
      xs[0] = normed;
      continue;
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] = slice_cols(normed, off, lengths[i]);
      off += lengths[i];
    }
  }
  std::vector<Tensor> logits;
  for (const auto& x : xs) {
    Tensor pooled = reshape(mean_axis(x, 1), {1, d_});
    logits.push_back(linear(relu(linear(pooled, fc1_w_, fc1_b_)), fc2_w_, fc2_b_));
  }
  return logits;
}

Tensor LanguageClassifier::classify(const Tensor& e_av, NormMode mode) {
  return classify_batch({e_av}, mode).front();
}

Tensor class_loss(const Tensor& logits, LanguageLabel gt) {
  const std::size_t m = logits.numel();
  if (gt.id < 0 || static_cast<std::size_t>(gt.id) >= m)
    throw LabelError("language label " + std::to_string(gt.id) + " outside [0, " +
                     std::to_string(m) + ")");
  Tensor row = reshape(logits, {1, m});
  const int target = gt.id;
  return nll_loss(log_softmax(row, 1), std::span<const int>(&target, 1));
}

LanguageLabel predict_language(std::span<const double> logits) {
  LanguageLabel best{0};
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<std::size_t>(best.id)]) best.id = static_cast<int>(i);
  return best;
}

LanguageLabel predict_language(const Tensor& logits) {
  const auto v = logits.to_vector();
  return predict_language(std::span<const double>(v));
}

}  // namespace polyavsr
