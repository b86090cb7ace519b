#pragma once

#include <stdexcept>

#include "polyavsr/model_config.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/tensor.hpp"

namespace polyavsr {

class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raw audio [S] -> time-major features [T×D] with T = S / k_a.
// Two 1-D convolutions: kernel = stride = k_a (the downsampler), then a
// length-preserving width-3 layer projecting to D channels.
class AudioFront {
 public:
  AudioFront(ParamStore& store, const ModelConfig& cfg);
  Tensor forward(const Tensor& samples) const;

 private:
  std::size_t downsample_;
  Tensor w1_, b1_, w2_, b2_;
};

// Frames [L×H×W×C] -> [L×D]; each frame is processed independently by two
// 3×3 convolutions (the second with stride 2), flattened, and projected.
class VisualFront {
 public:
  VisualFront(ParamStore& store, const ModelConfig& cfg);
  Tensor forward(const Tensor& frames) const;

 private:
  std::size_t flat_;
  Tensor w1_, b1_, w2_, b2_, proj_w_, proj_b_;
};

// [f_a | f_v] along the feature axis, layer-normalized, projected 2D -> D.
class Fusion {
 public:
  Fusion(ParamStore& store, const ModelConfig& cfg);
  Tensor forward(const Tensor& audio_feats, const Tensor& visual_feats) const;

 private:
  Tensor ln_g_, ln_b_, w_, b_;
};

}  // namespace polyavsr
