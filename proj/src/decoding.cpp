#include "polyavsr/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace polyavsr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

TokenSeq make_prefix(LanguageLabel lang, const TokenSeq& tokens, const Vocab& vocab) {
  TokenSeq p{Vocab::kSos, vocab.language_token(lang.id)};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

// Log-probabilities predicted after the full prefix.
std::vector<double> last_row(const TransformerDecoder& decoder, const Tensor& memory,
                             const TokenSeq& prefix) {
  NoGradGuard ng;
  Tensor lp = decoder.forward(prefix, memory);
  const std::size_t V = lp.dim(1), last = lp.dim(0) - 1;
  std::vector<double> row(V);
  for (std::size_t k = 0; k < V; ++k) row[k] = lp.at(last * V + k);
  return row;
}

bool ranks_before(double ja, const TokenSeq& a, double jb, const TokenSeq& b) {
  if (ja != jb) return ja > jb;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace

CtcPrefixScorer::CtcPrefixScorer(const CtcPosteriors& post, int blank)
    : post_(post), blank_(blank) {}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  const std::size_t T = post_.frames;
  State s;
  s.r_n.assign(T, kNegInf);
  s.r_b.assign(T, kNegInf);
  double acc = 0;
  for (std::size_t t = 0; t < T; ++t) {
    acc += post_.at(t, blank_);
    s.r_b[t] = acc;
  }
  s.prefix_score = 0.0;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& g, int c) const {
  const std::size_t T = post_.frames;
  State h;
  h.last = c;
  h.r_n.assign(T, kNegInf);
  h.r_b.assign(T, kNegInf);
  const bool empty_prefix = g.last < 0;
  // phi_t: mass of g over frames 0..t that may be followed directly by c.
  auto phi = [&](std::size_t t) {
    return g.last == c ? g.r_b[t] : log_add(g.r_b[t], g.r_n[t]);
  };
  h.r_n[0] = empty_prefix ? post_.at(0, c) : kNegInf;
  double psi = h.r_n[0];
  for (std::size_t t = 1; t < T; ++t) {
    const double p = phi(t - 1);
    h.r_n[t] = log_add(h.r_n[t - 1], p) + post_.at(t, c);
    h.r_b[t] = log_add(h.r_b[t - 1], h.r_n[t - 1]) + post_.at(t, blank_);
    psi = log_add(psi, p + post_.at(t, c));
  }
  h.prefix_score = psi;
  return h;
}

double CtcPrefixScorer::full_score(const State& g) const {
  const std::size_t T = post_.frames;
  return log_add(g.r_n[T - 1], g.r_b[T - 1]);
}

double joint_score(double ctc, double att, double ctc_weight) {
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0))
    throw std::invalid_argument("ctc_weight must lie in [0, 1], got " + std::to_string(ctc_weight));
  if (ctc_weight == 0.0) return att;
  if (ctc_weight == 1.0) return ctc;
  return ctc_weight * ctc + (1.0 - ctc_weight) * att;
}

TokenSeq greedy_decode(const TransformerDecoder& decoder, const Tensor& memory,
                       LanguageLabel lang, std::size_t max_len, const Vocab& vocab) {
  TokenSeq out;
  const int first = vocab.first_content();
  const int V = static_cast<int>(vocab.size());
  while (out.size() < max_len) {
    const auto row = last_row(decoder, memory, make_prefix(lang, out, vocab));
    int best = Vocab::kEos;
    for (int k = first; k < V; ++k)
      if (row[static_cast<std::size_t>(k)] > row[static_cast<std::size_t>(best)]) best = k;
    if (best == Vocab::kEos) break;
    out.push_back(best);
  }
  return out;
}

Hypothesis score_hypothesis(const TransformerDecoder& decoder, const Tensor& memory,
                            const CtcPosteriors& post, LanguageLabel lang, const TokenSeq& tokens,
                            double ctc_weight, const Vocab& vocab) {
  Hypothesis h;
  h.tokens = tokens;
  {
    NoGradGuard ng;
    Tensor lp = decoder.forward(make_prefix(lang, tokens, vocab), memory);
    const std::size_t V = lp.dim(1);
    for (std::size_t j = 0; j <= tokens.size(); ++j) {
      const int y = j < tokens.size() ? tokens[j] : Vocab::kEos;
      h.att_score += lp.at((j + 1) * V + static_cast<std::size_t>(y));
    }
  }
  CtcPrefixScorer scorer(post);
  auto state = scorer.initial();
  for (int y : tokens) state = scorer.extend(state, y);
  h.ctc_score = scorer.full_score(state);
  h.joint = joint_score(h.ctc_score, h.att_score, ctc_weight);
  return h;
}

Hypothesis beam_decode(const TransformerDecoder& decoder, const Tensor& memory,
                       const CtcPosteriors& post, LanguageLabel lang, const DecodeOptions& opts,
                       const Vocab& vocab) {
  if (opts.beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
  if (!(opts.ctc_weight >= 0.0 && opts.ctc_weight <= 1.0))
    throw std::invalid_argument("beam_decode: ctc weight must lie in [0, 1]");

  struct Entry {
    TokenSeq tokens;
    double att = 0;
    CtcPrefixScorer::State ctc;
    double joint = 0;
    bool finished = false;
  };

  const double lambda = opts.ctc_weight;
  const CtcPrefixScorer scorer(post);
  const int first = vocab.first_content();
  const int V = static_cast<int>(vocab.size());

  std::vector<Entry> live{{TokenSeq{}, 0.0, scorer.initial(), 0.0, false}};
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step <= opts.max_len && !live.empty(); ++step) {
    std::vector<Entry> cand;
    for (const auto& e : live) {
      const auto row = last_row(decoder, memory, make_prefix(lang, e.tokens, vocab));
      Entry fin{e.tokens, e.att + row[Vocab::kEos], e.ctc, 0.0, true};
      fin.joint = joint_score(scorer.full_score(e.ctc), fin.att, lambda);
      cand.push_back(std::move(fin));
      if (e.tokens.size() >= opts.max_len) continue;
      for (int k = first; k < V; ++k) {
        Entry ext;
        ext.tokens = e.tokens;
        ext.tokens.push_back(k);
        ext.att = e.att + row[static_cast<std::size_t>(k)];
        ext.ctc = scorer.extend(e.ctc, k);
        ext.joint = joint_score(ext.ctc.prefix_score, ext.att, lambda);
        cand.push_back(std::move(ext));
      }
    }
    const std::size_t keep = std::min(opts.beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const Entry& a, const Entry& b) {
                        return ranks_before(a.joint, a.tokens, b.joint, b.tokens);
                      });
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = cand[i];
      if (c.finished) {
        Hypothesis h;
        h.tokens = c.tokens;
        h.att_score = c.att;
        h.ctc_score = scorer.full_score(c.ctc);
        h.joint = c.joint;
        finished.push_back(std::move(h));
      } else {
        live.push_back(std::move(c));
      }
    }
    // Joint scores never increase along an extension, so no live entry can
    // overtake a finished one that already scores at least as high.
    if (!finished.empty() && !live.empty()) {
      double best_fin = kNegInf, best_live = kNegInf;
      for (const auto& h : finished) best_fin = std::max(best_fin, h.joint);
      for (const auto& e : live) best_live = std::max(best_live, e.joint);
      if (best_fin >= best_live) break;
    }
  }

  if (opts.include_greedy)
    finished.push_back(score_hypothesis(
        decoder, memory, post, lang, greedy_decode(decoder, memory, lang, opts.max_len, vocab),
        lambda, vocab));
  return *std::min_element(finished.begin(), finished.end(),
                           [](const Hypothesis& a, const Hypothesis& b) {
                             return ranks_before(a.joint, a.tokens, b.joint, b.tokens);
                           });
}

}  // namespace polyavsr
