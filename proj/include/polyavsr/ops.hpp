#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "polyavsr/tensor.hpp"

namespace polyavsr {

// Matrix and elementwise arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[M×K]·w[K×N] + bias[N]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& row);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
// 2-D mean along `axis`, keeping the reduced extent as 1.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Shape manipulation.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

// Normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

enum class NormMode { train, eval };

struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
};

// x is B×C×T, or C×N (treated as B=1). Train mode normalizes each channel
// over every other axis and updates `stats`; eval mode reads `stats`.
Tensor batch_norm1d(const Tensor& x, const Tensor& gain, const Tensor& bias, RunningStats& stats,
                    NormMode mode, double eps = 1e-5);

Tensor log_softmax(const Tensor& x, std::size_t axis);

// Convolutions use cross-correlation. conv1d: x[C_in×T], kernels[C_out×C_in×K].
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// NHWC layout: x[N×H×W×C_in], kernels[C_out×K_h×K_w×C_in] -> [N×H'×W'×C_out].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Rows of table selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// −Σ_i log_probs[i, targets[i]].
Tensor nll_loss(const Tensor& log_probs, std::span<const int> targets);

// Multi-head scaled dot-product attention over already-projected q[Tq×d],
// k[Tk×d], v[Tk×d]. With `causal`, query i sees keys 0..i.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            bool causal);

// Adds a constant (non-differentiable) tensor to x.
Tensor add_constant(const Tensor& x, std::span<const double> c);

}  // namespace polyavsr
