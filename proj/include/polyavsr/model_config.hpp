#pragma once

#include <cstddef>
#include <cstdint>

#include "polyavsr/tensor.hpp"

namespace polyavsr {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t prompt_count = 4;  // n
  std::size_t encoder_layers = 4;
  std::size_t encoder_heads = 4;
  std::size_t ff_mult = 4;
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 4;

  std::size_t audio_downsample = 4;  // k_a
  std::size_t audio_channels = 16;
  std::size_t frame_height = 8;
  std::size_t frame_width = 8;
  std::size_t frame_channels = 1;
  std::size_t video_channels = 8;

  std::size_t num_languages = 3;  // m
  std::size_t vocab_size = 38;

  DType dtype = DType::f32;
  std::uint64_t seed = 1;
};

}  // namespace polyavsr
