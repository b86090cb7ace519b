#include "polyavsr/frontends.hpp"

#include <cmath>
#include <string>

#include "polyavsr/ops.hpp"

namespace polyavsr {

namespace {
double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

AudioFront::AudioFront(ParamStore& store, const ModelConfig& cfg)
    : downsample_(cfg.audio_downsample) {
  const std::size_t c = cfg.audio_channels, k = cfg.audio_downsample, d = cfg.d_model;
  w1_ = store.add_uniform("audio_front.conv1.weight", {c, 1, k}, fan_in_bound(k));
  b1_ = store.add_constant("audio_front.conv1.bias", {c}, 0.0);
  w2_ = store.add_uniform("audio_front.conv2.weight", {d, c, 3}, fan_in_bound(3 * c));
  b2_ = store.add_constant("audio_front.conv2.bias", {d}, 0.0);
}

Tensor AudioFront::forward(const Tensor& samples) const {
  const std::size_t S = samples.numel();
  if (S == 0 || S % downsample_ != 0)
    throw AlignmentError("audio length " + std::to_string(S) + " is not a multiple of k_a=" +
                         std::to_string(downsample_));
  Tensor x = reshape(samples, {1, S});
  x = relu(conv1d(x, w1_, b1_, downsample_, 0));
  x = conv1d(x, w2_, b2_, 1, 1);
  return transpose(x);
}

VisualFront::VisualFront(ParamStore& store, const ModelConfig& cfg) {
  const std::size_t c = cfg.video_channels, ci = cfg.frame_channels, d = cfg.d_model;
  const std::size_t h2 = (cfg.frame_height + 2 - 3) / 2 + 1;
  const std::size_t w2 = (cfg.frame_width + 2 - 3) / 2 + 1;
  flat_ = h2 * w2 * c;
  w1_ = store.add_uniform("visual_front.conv1.weight", {c, 3, 3, ci}, fan_in_bound(9 * ci));
  b1_ = store.add_constant("visual_front.conv1.bias", {c}, 0.0);
  w2_ = store.add_uniform("visual_front.conv2.weight", {c, 3, 3, c}, fan_in_bound(9 * c));
  b2_ = store.add_constant("visual_front.conv2.bias", {c}, 0.0);
  proj_w_ = store.add_uniform("visual_front.proj.weight", {flat_, d}, fan_in_bound(flat_));
  proj_b_ = store.add_constant("visual_front.proj.bias", {d}, 0.0);
}

Tensor VisualFront::forward(const Tensor& frames) const {
  if (frames.rank() != 4)
    throw DimensionError("visual_front: expected L×H×W×C frames, got " +
                         shape_str(frames.shape()));
  const std::size_t L = frames.dim(0);
  Tensor x = relu(conv2d(frames, w1_, b1_, 1, 1));
  x = relu(conv2d(x, w2_, b2_, 2, 1));
  if (x.numel() != L * flat_)
    throw DimensionError("visual_front: frame size " + shape_str(frames.shape()) +
                         " does not match the configured frame geometry");
  return linear(reshape(x, {L, flat_}), proj_w_, proj_b_);
}

Fusion::Fusion(ParamStore& store, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  ln_g_ = store.add_constant("fusion.norm.gain", {2 * d}, 1.0);
  ln_b_ = store.add_constant("fusion.norm.bias", {2 * d}, 0.0);
  w_ = store.add_uniform("fusion.proj.weight", {2 * d, d}, fan_in_bound(2 * d));
  b_ = store.add_constant("fusion.proj.bias", {d}, 0.0);
}

Tensor Fusion::forward(const Tensor& audio_feats, const Tensor& visual_feats) const {
  if (audio_feats.rank() != 2 || visual_feats.rank() != 2)
    throw DimensionError("fuse: expected T×D features");
  if (audio_feats.dim(0) != visual_feats.dim(0))
    throw AlignmentError("fuse: audio length T=" + std::to_string(audio_feats.dim(0)) +
                         " but video length T=" + std::to_string(visual_feats.dim(0)));
  if (audio_feats.dim(1) != visual_feats.dim(1))
    throw DimensionError("fuse: feature widths " + std::to_string(audio_feats.dim(1)) + " and " +
                         std::to_string(visual_feats.dim(1)));
  Tensor x = concat_cols({audio_feats, visual_feats});
  return linear(layer_norm(x, ln_g_, ln_b_), w_, b_);
}

}  // namespace polyavsr
