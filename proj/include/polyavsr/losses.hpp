#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "polyavsr/classifier.hpp"
#include "polyavsr/tensor.hpp"

namespace polyavsr {

inline constexpr int kBlank = 0;

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// −log Σ_{π ∈ B⁻¹(y)} Π_t p(π_t) by the log-space forward recursion over the
// blank-extended target. `log_probs` is T×V row-major. Returns +infinity when
// the target cannot be emitted in T frames.
double ctc_loss(std::span<const double> log_probs, std::size_t T, std::size_t V,
                std::span<const int> target, int blank = kBlank);

// d(ctc_loss)/d(logits) where log_probs = log_softmax(logits) row-wise:
// softmax minus per-symbol occupancy from the forward–backward pass.
// Throws GradientError when the loss is infinite.
std::vector<double> ctc_grad(std::span<const double> log_probs, std::size_t T, std::size_t V,
                             std::span<const int> target, int blank = kBlank);

// Differentiable CTC on raw logits [T×V] (log_softmax applied inside).
// The value may be +infinity; backward through it then throws.
Tensor ctc_loss_op(const Tensor& logits, std::span<const int> target, int blank = kBlank);

class SequenceAlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Σ_j −log p(y_j | y_<j) over teacher-forced rows; target ends with <eos>.
Tensor attention_loss(const Tensor& step_log_probs, std::span<const int> target_with_eos);

// γ_i = r_i^{-1/2}, r_i = share of the batch with sample i's language.
std::vector<double> balance_weights(std::span<const LanguageLabel> batch_labels);

struct LossWeights {
  double alpha = 0.1;
  double beta = 10.0;
};

// γ·(α·ctc + (1−α)·att + β·cls) on scalar tensors.
Tensor total_loss(const Tensor& ctc, const Tensor& att, const Tensor& cls, double gamma,
                  LossWeights w);
double total_loss(double ctc, double att, double cls, double gamma, LossWeights w);

struct LossBreakdown {
  double ctc = 0;
  double att = 0;
  double cls = 0;
  double gamma = 1;
  double total = 0;
};

}  // namespace polyavsr
