#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "polyavsr/classifier.hpp"
#include "polyavsr/decoder.hpp"
#include "polyavsr/vocab.hpp"

namespace polyavsr {

struct Hypothesis {
  TokenSeq tokens;  // content tokens only
  double joint = 0;
  double att_score = 0;  // Σ log p_att over tokens and <eos>
  double ctc_score = 0;  // log p_ctc(tokens)
};

// Frame-level CTC log-probabilities [T×V] for one utterance.
struct CtcPosteriors {
  std::vector<double> log_probs;
  std::size_t frames = 0;
  std::size_t vocab = 0;

  double at(std::size_t t, int k) const { return log_probs[t * vocab + static_cast<std::size_t>(k)]; }
};

// Incremental CTC prefix probabilities: for a prefix g, r_n[t] / r_b[t] are
// the log masses of emitting g within frames 0..t ending in a non-blank /
// blank symbol.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<double> r_n;
    std::vector<double> r_b;
    int last = -1;
    double prefix_score = 0;  // log P(g is a prefix of the labelling)
  };

  explicit CtcPrefixScorer(const CtcPosteriors& post, int blank = 0);

  State initial() const;
  State extend(const State& g, int token) const;
  // log P(labelling == g)
  double full_score(const State& g) const;

 private:
  const CtcPosteriors& post_;
  int blank_;
};

struct DecodeOptions {
  std::size_t beam = 4;
  double ctc_weight = 0.1;  // λ_ctc
  std::size_t max_len = 8;  // content tokens
  // Score the greedy hypothesis alongside the beam's finished set.
  bool include_greedy = true;
};

double joint_score(double ctc, double att, double ctc_weight);

// Argmax over content tokens and <eos> until <eos> or max_len tokens.
TokenSeq greedy_decode(const TransformerDecoder& decoder, const Tensor& memory,
                       LanguageLabel lang, std::size_t max_len, const Vocab& vocab);

// Joint score of a complete hypothesis (content tokens followed by <eos>).
Hypothesis score_hypothesis(const TransformerDecoder& decoder, const Tensor& memory,
                            const CtcPosteriors& post, LanguageLabel lang, const TokenSeq& tokens,
                            double ctc_weight, const Vocab& vocab);

// Length-synchronous beam search ranking by λ·ctc_prefix + (1−λ)·att. With
// include_greedy the greedy hypothesis is scored as one more candidate, so
// the result never scores below it. Ties prefer shorter sequences, then lexicographically
// smaller ids.
Hypothesis beam_decode(const TransformerDecoder& decoder, const Tensor& memory,
                       const CtcPosteriors& post, LanguageLabel lang, const DecodeOptions& opts,
                       const Vocab& vocab);

}  // namespace polyavsr
