#include <doctest.h>

#include <cmath>
#include <functional>

#include "ctc_oracle.hpp"
#include "helpers.hpp"
#include "polyavsr/decoding.hpp"
#include "polyavsr/losses.hpp"
#include "polyavsr/model.hpp"
#include "polyavsr/ops.hpp"

using namespace polyavsr;
using testing_util::randn;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 8;
  c.prompt_count = 2;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.ff_mult = 2;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.num_languages = 2;
  c.vocab_size = 11;  // 4 content tokens
  c.dtype = DType::f64;
  return c;
}

Vocab tiny_vocab() { return Vocab(2, {"a", "b", "c", "d"}); }

struct Fixture {
  ModelConfig cfg = tiny();
  Vocab vocab = tiny_vocab();
  ParamStore store{cfg.dtype, 21};
  TransformerDecoder dec{store, cfg};
  Tensor memory;
  CtcPosteriors post;

  explicit Fixture(std::uint64_t seed, std::size_t frames = 6, double sharpen = 1.0) {
    std::mt19937_64 rng(seed);
    memory = randn({frames + 2, cfg.d_model}, rng, false);
    post = ctc_posteriors(scale(randn({frames, cfg.vocab_size}, rng, false), sharpen));
  }
};

// Every content sequence of length <= max_len.
void enumerate(int first, int last, std::size_t max_len, TokenSeq& cur,
               const std::function<void(const TokenSeq&)>& visit) {
  visit(cur);
  if (cur.size() == max_len) return;
  for (int t = first; t <= last; ++t) {
    cur.push_back(t);
    enumerate(first, last, max_len, cur, visit);
    cur.pop_back();
  }
}

}  // namespace

TEST_CASE("vocab") {
  const Vocab v = tiny_vocab();
  CHECK(v.size() == 11);
  CHECK(v.token(Vocab::kBlank) == "<blank>");
  CHECK(v.language_token(1) == 6);
  CHECK(v.is_language_token(5));
  CHECK_FALSE(v.is_language_token(7));
  CHECK(v.first_content() == 7);
  const TokenSeq ids{7, 9, 10, 8};
  CHECK(v.encode(v.decode(ids)) == ids);
  CHECK(v.encode("a zz") == TokenSeq{7, Vocab::kUnk});
  CHECK(v.strip_specials(TokenSeq{2, 5, 7, 3}) == TokenSeq{7});
  CHECK_THROWS(v.language_token(2));
  CHECK_THROWS(Vocab(1, {"a", "a"}));
}

TEST_CASE("prefix scorer agrees with the CTC forward pass") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 2 + trial % 5, V = 4;
    const auto post = ctc_posteriors(randn({T, V}, rng, false));
    CtcPrefixScorer scorer(post);
    auto state = scorer.initial();
    TokenSeq y;
    std::uniform_int_distribution<int> tok(1, 3);
    double prev_prefix = 0.0;
    for (int k = 0; k < 3; ++k) {
      y.push_back(tok(rng));
      state = scorer.extend(state, y.back());
      CHECK(state.prefix_score <= prev_prefix + 1e-12);
      prev_prefix = state.prefix_score;
      const double ref = ctc_oracle::brute_force_nll(post.log_probs, T, V, y);
      const double got = scorer.full_score(state);
      if (std::isinf(ref)) CHECK(std::isinf(got));
      else CHECK(std::abs(got + ref) < 1e-9);
      CHECK(got <= state.prefix_score + 1e-12);
    }
  }
}

TEST_CASE("joint score") {
  CHECK(joint_score(-2.0, -4.0, 0.0) == -4.0);
  CHECK(joint_score(-2.0, -4.0, 1.0) == -2.0);
  CHECK(std::abs(joint_score(-2.0, -4.0, 0.25) - (-3.5)) < 1e-15);
  CHECK_THROWS(joint_score(-1.0, -1.0, 1.5));

  Fixture fx(41);
  const TokenSeq y{7, 9};
  const auto h = score_hypothesis(fx.dec, fx.memory, fx.post, {1}, y, 0.3, fx.vocab);
  const TokenSeq prefix{Vocab::kSos, 6, 7, 9};
  const auto rows = fx.dec.forward(prefix, fx.memory);
  const double att = rows.at(1 * 11 + 7) + rows.at(2 * 11 + 9) + rows.at(3 * 11 + Vocab::kEos);
  CHECK(std::abs(h.att_score - att) < 1e-12);
  CHECK(std::abs(h.ctc_score + ctc_loss(fx.post.log_probs, fx.post.frames, fx.post.vocab, y)) < 1e-12);
  CHECK(std::abs(h.joint - (0.3 * h.ctc_score + 0.7 * h.att_score)) < 1e-12);
}

TEST_CASE("greedy decode") {
  Fixture fx(51);
  const auto g = greedy_decode(fx.dec, fx.memory, {0}, 5, fx.vocab);
  CHECK(g.size() <= 5);
  // Each step is the argmax over content tokens and <eos>.
  TokenSeq prefix{Vocab::kSos, 5};
  for (std::size_t i = 0; i <= g.size() && i < 5; ++i) {
    const auto rows = fx.dec.forward(prefix, fx.memory);
    const std::size_t r = prefix.size() - 1;
    int best = Vocab::kEos;
    for (int k = 7; k < 11; ++k)
      if (rows.at(r * 11 + static_cast<std::size_t>(k)) > rows.at(r * 11 + static_cast<std::size_t>(best))) best = k;
    if (i == g.size()) {
      CHECK(best == Vocab::kEos);
      break;
    }
    CHECK(best == g[i]);
    prefix.push_back(g[i]);
  }
}

TEST_CASE("beam = 1 with lambda = 0 reproduces greedy") {
  for (std::uint64_t seed = 60; seed < 80; ++seed) {
    Fixture fx(seed);
    DecodeOptions opts;
    opts.beam = 1;
    opts.ctc_weight = 0.0;
    opts.max_len = 5;
    opts.include_greedy = false;
    const LanguageLabel lang{static_cast<int>(seed % 2)};
    CHECK(beam_decode(fx.dec, fx.memory, fx.post, lang, opts, fx.vocab).tokens ==
          greedy_decode(fx.dec, fx.memory, lang, 5, fx.vocab));
  }
}

TEST_CASE("wide beam finds the exhaustive optimum") {
  for (double lambda : {0.0, 0.3, 1.0}) {
    for (std::uint64_t seed = 90; seed < 94; ++seed) {
      Fixture fx(seed, 5, 3.0);
      DecodeOptions opts;
      opts.beam = 200;
      opts.ctc_weight = lambda;
      opts.max_len = 3;
      opts.include_greedy = false;
      const LanguageLabel lang{1};
      double best = -INFINITY;
      TokenSeq cur;
      enumerate(7, 10, 3, cur, [&](const TokenSeq& y) {
        best = std::max(best, score_hypothesis(fx.dec, fx.memory, fx.post, lang, y, lambda, fx.vocab).joint);
      });
      const auto h = beam_decode(fx.dec, fx.memory, fx.post, lang, opts, fx.vocab);
      CHECK(std::abs(h.joint - best) < 1e-9);
      const auto rescored = score_hypothesis(fx.dec, fx.memory, fx.post, lang, h.tokens, lambda, fx.vocab);
      CHECK(std::abs(rescored.joint - h.joint) < 1e-9);
      if (lambda == 1.0) {
        // Pure CTC: the winner is the most probable labelling within max_len.
        double ctc_best = -INFINITY;
        enumerate(7, 10, 3, cur, [&](const TokenSeq& y) {
          ctc_best = std::max(ctc_best, -ctc_loss(fx.post.log_probs, fx.post.frames, fx.post.vocab, y));
        });
        CHECK(std::abs(h.ctc_score - ctc_best) < 1e-9);
      }
    }
  }
}

TEST_CASE("beam never scores below greedy") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    Fixture fx(seed);
    for (double lambda : {0.1, 0.5}) {
      DecodeOptions opts;
      opts.beam = 3;
      opts.ctc_weight = lambda;
      opts.max_len = 5;
      const LanguageLabel lang{0};
      const auto g = greedy_decode(fx.dec, fx.memory, lang, 5, fx.vocab);
      const double gs = score_hypothesis(fx.dec, fx.memory, fx.post, lang, g, lambda, fx.vocab).joint;
      CHECK(beam_decode(fx.dec, fx.memory, fx.post, lang, opts, fx.vocab).joint >= gs - 1e-12);
    }
  }
}
