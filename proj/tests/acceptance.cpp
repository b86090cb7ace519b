// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "ctc_oracle.hpp"
#include "helpers.hpp"
#include "polyavsr/checkpoint.hpp"
#include "polyavsr/classifier.hpp"
#include "polyavsr/config.hpp"
#include "polyavsr/decoding.hpp"
#include "polyavsr/evaluate.hpp"
#include "polyavsr/grad_check.hpp"
#include "polyavsr/losses.hpp"
#include "polyavsr/model.hpp"
#include "polyavsr/ops.hpp"
#include "polyavsr/trainer.hpp"
#include "polyavsr/wer.hpp"

using namespace polyavsr;
using testing_util::randn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::vector<int> selected;  // empty: all criteria

void report(int id, const std::function<Outcome()>& body) {
  if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

RunConfig base_run(const Corpus& corpus, std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.model = fit_model_to_corpus(cfg.model, corpus);
  cfg.log_interval = 500;
  return cfg;
}

Corpus make_corpus(std::vector<double> ratios = {}) {
  CorpusConfig cc;
  cc.train_ratios = std::move(ratios);
  return make_splits(build_language_specs(cc), cc);
}

double language_accuracy(AvsrModel& model, const Split& split) {
  NoGradGuard guard;
  std::size_t right = 0;
  for (const auto& u : split.utterances) {
    const auto enc = model.encode(u.audio, u.video, u.frames);
    right += predict_language(model.classifier().classify(enc.e_av.values)).id == u.language;
  }
  return static_cast<double>(right) / static_cast<double>(split.utterances.size());
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.decode.beam = cfg.beam;
  o.decode.ctc_weight = cfg.ctc_weight;
  o.decode.max_len = cfg.max_decode_len;
  return o;
}

std::string wer_list(const std::vector<double>& w) {
  std::string s = "[";
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + fmt("%.3f", w[i]);
  return s + "]";
}

// Criterion 1
Outcome ctc_sweep() {
  std::mt19937_64 rng(1);
  std::size_t cases = 0;
  double worst = 0;
  bool ok = true;
  for (std::size_t V = 1; V <= 4; ++V)
    for (std::size_t T = 1; T <= 6; ++T) {
      if (std::pow(static_cast<double>(V), static_cast<double>(T)) > 4096) continue;
      const auto lp = log_softmax(randn({T, V}, rng, false), 1).to_vector();
      // Every target over the non-blank symbols with |y| <= 3.
      std::vector<std::vector<int>> targets{{}};
      for (std::size_t len = 1; len <= 3 && V > 1; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& t : targets)
          if (t.size() == len - 1)
            for (int k = 1; k < static_cast<int>(V); ++k) {
              auto e = t;
              e.push_back(k);
              next.push_back(e);
            }
        targets.insert(targets.end(), next.begin(), next.end());
      }
      for (const auto& y : targets) {
        const double ref = ctc_oracle::brute_force_nll(lp, T, V, y);
        const double got = ctc_loss(lp, T, V, y);
        ++cases;
        if (std::isinf(ref) || std::isinf(got)) {
          ok &= std::isinf(ref) && std::isinf(got);
          continue;
        }
        worst = std::max(worst, std::abs(got - ref));
      }
    }
  ok &= worst <= 1e-9;
  return {ok, std::to_string(cases) + " cases, max |diff| " + fmt("%.2e", worst)};
}

// Criterion 2
Outcome gradient_suite() {
  std::mt19937_64 rng(2);
  double worst = 0;
  std::string parts;
  auto note = [&](const char* name, double e) {
    worst = std::max(worst, e);
    parts += std::string(parts.empty() ? "" : ", ") + name + " " + fmt("%.1e", e);
  };

  auto logits = randn({6, 5}, rng);
  note("ctc", grad_check([&] { return ctc_loss_op(logits, std::vector<int>{1, 3, 3}); }, {logits}, 1e-5)
                  .max_rel_error);

  ModelConfig mc;
  mc.d_model = 8;
  mc.prompt_count = 2;
  mc.encoder_layers = 2;
  mc.encoder_heads = 2;
  mc.ff_mult = 2;
  mc.decoder_layers = 1;
  mc.decoder_heads = 2;
  mc.audio_channels = 4;
  mc.video_channels = 2;
  mc.frame_height = 4;
  mc.frame_width = 4;
  mc.num_languages = 2;
  mc.vocab_size = 11;
  mc.dtype = DType::f64;
  AvsrModel model(mc);

  auto mem = randn({5, 8}, rng);
  const std::vector<int> prefix{Vocab::kSos, Vocab::kFirstLanguage, 7, 9};
  const std::vector<int> target{7, 9, Vocab::kEos};
  std::vector<Tensor> dec_params{mem};
  for (const auto& p : model.store().with_prefix("decoder.")) dec_params.push_back(p.tensor);
  note("attention", grad_check([&] {
                      const Tensor rows = model.decoder().forward(prefix, mem);
                      return attention_loss(slice_rows(rows, 1, 3), target);
                    }, dec_params, 1e-5).max_rel_error);

  auto e_av = randn({7, 8}, rng);
  std::vector<Tensor> cls_params{e_av};
  for (const auto& p : model.store().with_prefix("classifier.")) cls_params.push_back(p.tensor);
  note("class", grad_check([&] { return class_loss(model.classifier().classify(e_av), {1}); },
                           cls_params, 1e-5).max_rel_error);

  // Composite objective over a two-utterance batch, as the trainer builds it.
  struct Sample {
    std::vector<float> audio, video;
    std::size_t frames;
    TokenSeq y;
    int lang;
  };
  std::vector<Sample> batch;
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.frames = 4;
    s.audio = testing_util::randn_f(16, rng);
    s.video = testing_util::randn_f(4 * 16, rng);
    s.y = i == 0 ? TokenSeq{7, 8} : TokenSeq{9};
    s.lang = i;
    batch.push_back(s);
  }
  const LossWeights w{0.1, 10.0};
  auto composite = [&] {
    std::vector<Encoded> enc;
    std::vector<Tensor> e;
    std::vector<LanguageLabel> labels;
    for (const auto& s : batch) {
      enc.push_back(model.encode(s.audio, s.video, s.frames));
      e.push_back(enc.back().e_av.values);
      labels.push_back({s.lang});
    }
    const auto lg = model.classifier().classify_batch(e, NormMode::train);
    const auto gamma = balance_weights(labels);
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::vector<int> p{Vocab::kSos, Vocab::kFirstLanguage + batch[i].lang};
      p.insert(p.end(), batch[i].y.begin(), batch[i].y.end());
      auto t = batch[i].y;
      t.push_back(Vocab::kEos);
      const Tensor rows = model.decoder().forward(p, enc[i].e_av.values);
      Tensor term = total_loss(ctc_loss_op(enc[i].ctc_logits, batch[i].y),
                               attention_loss(slice_rows(rows, 1, rows.dim(0) - 1), t),
                               class_loss(lg[i], labels[i]), gamma[i], w);
      total = i == 0 ? term : add(total, term);
    }
    return scale(total, 0.5);
  };
  std::vector<Tensor> all;
  for (const auto& p : model.store().params()) all.push_back(p.tensor);
  const auto r = grad_check(composite, all, 1e-5);
  note("composite", r.max_rel_error);
  if (r.max_rel_error >= 1e-4)
    parts += " (worst: " + model.store().params()[r.worst_param].name + "[" + std::to_string(r.worst_index) +
             "] analytic " + fmt("%.6e", r.worst_analytic) + " numeric " + fmt("%.6e", r.worst_numeric) + ")";
  return {worst < 1e-4, parts};
}

// Criterion 3
Outcome prompt_mechanics() {
  ModelConfig mc;
  mc.dtype = DType::f64;
  ParamStore store(mc.dtype, 3);
  PromptEncoder enc(store, mc);
  std::mt19937_64 rng(3);
  auto fused = randn({16, mc.d_model}, rng, false);
  bool ok = true;
  std::string shapes;
  for (std::size_t n : {0, 1, 4, 16}) {
    const auto bank = init_prompt_bank(n, mc.d_model, mc.encoder_layers, 11, mc.dtype);
    const auto e = enc.encode_with_prompts(fused, bank);
    ok &= e.values.shape() == Shape{n + 16, mc.d_model};
    shapes += shape_str(e.values.shape()) + " ";
    if (n == 0) {
      const bool same = e.values.to_vector() == enc.encode(fused).to_vector();
      ok &= same;
      shapes += same ? "(bitwise = promptless) " : "(differs from promptless) ";
      continue;
    }
    backward(sum(mul(e.values, randn(e.values.shape(), rng, false))));
    std::size_t reached = 0;
    for (const auto& p : bank.prompts) {
      double g = 0;
      for (double v : p.grad_vector()) g += std::abs(v);
      reached += g > 0;
    }
    ok &= reached == bank.layers();
    if (n == 4) shapes += "grads reach " + std::to_string(reached) + "/" + std::to_string(bank.layers()) + " ";
  }
  return {ok, shapes};
}

// Criterion 4
Outcome balancing() {
  const std::vector<LanguageLabel> aaab{{0}, {0}, {0}, {1}};
  const auto g = balance_weights(aaab);
  bool ok = std::abs(g[0] - 1.1547005383792515) < 1e-12 && std::abs(g[3] - 2.0) < 1e-12;
  const std::vector<LanguageLabel> uni{{2}, {2}, {2}, {2}};
  for (double v : balance_weights(uni)) ok &= v == 1.0;

  CorpusConfig cc;
  cc.train_total = 150;
  cc.valid_per_lang = 1;
  cc.test_per_lang = 1;
  const Corpus corpus = make_splits(build_language_specs(cc), cc);
  Split one;
  const auto& train = corpus.split("train");
  for (std::size_t i = 0; i < train.utterances.size(); ++i)
    if (train.utterances[i].language == 0) one.utterances.push_back(train.utterances[i]);
  RunConfig cfg = base_run(corpus);
  cfg.model.dtype = DType::f64;
  cfg.steps = 30;
  cfg.log_interval = 1;
  auto replay = [&](bool balance) {
    RunConfig c = cfg;
    c.balance_enabled = balance;
    AvsrModel model(c.model);
    std::ostringstream log;
    train_model(model, one, c, &log);
    return log.str();
  };
  const bool same = replay(true) == replay(false);
  ok &= same;
  return {ok, "gamma(A)=" + fmt("%.15f", g[0]) + " gamma(B)=" + fmt("%.1f", g[3]) +
                  ", single-language replay " + (same ? "identical" : "differs")};
}

// Criterion 5
Outcome language_id(const Corpus& corpus) {
  RunConfig cfg = base_run(corpus);
  cfg.steps = 2000;
  cfg.classifier_warmup_steps = 2000;
  cfg.freeze_backbone = true;
  AvsrModel model(cfg.model);
  const double before = language_accuracy(model, corpus.split("test"));
  train_model(model, corpus.split("train"), cfg, nullptr);
  const double after = language_accuracy(model, corpus.split("test"));
  const bool ok = after >= 0.95 && std::abs(before - 1.0 / 3) <= 0.15;
  return {ok, "held-out accuracy untrained " + fmt("%.3f", before) + ", trained " + fmt("%.3f", after)};
}

// Criterion 6; leaves the trained model for criterion 9.
Outcome end_to_end(const Corpus& corpus, std::unique_ptr<AvsrModel>& trained) {
  RunConfig cfg = base_run(corpus);
  cfg.steps = 5000;
  EvalOptions opts = eval_options(cfg);
  opts.noise_snr_db = 0.0;

  AvsrModel untrained(cfg.model);
  const auto base = evaluate_model(untrained, corpus.split("test"), corpus.vocab, opts);
  trained = std::make_unique<AvsrModel>(cfg.model);
  train_model(*trained, corpus.split("train"), cfg, nullptr);
  const auto ev = evaluate_model(*trained, corpus.split("test"), corpus.vocab, opts);

  const auto& b = base.report.conditions.at("clean");
  const auto& c = ev.report.conditions.at("clean");
  const auto& n = ev.report.conditions.at("noisy");
  bool ok = true;
  for (std::size_t l = 0; l < c.wer.size(); ++l) {
    ok &= c.wer[l] <= 0.30 && c.wer[l] < b.wer[l] && b.wer[l] >= 0.9;
    ok &= n.wer[l] >= c.wer[l];
  }
  return {ok, "untrained clean " + wer_list(b.wer) + ", trained clean " + wer_list(c.wer) +
                  ", noisy 0 dB " + wer_list(n.wer)};
}

// Criterion 7
Outcome imbalance() {
  const Corpus corpus = make_corpus({0.6, 0.3, 0.1});
  const std::size_t minority = 2;
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed : {1, 2, 3}) {
    double w[2];
    for (int balanced = 1; balanced >= 0; --balanced) {
      RunConfig cfg = base_run(corpus, seed);
      cfg.steps = 2000;
      cfg.balance_enabled = balanced == 1;
      AvsrModel model(cfg.model);
      train_model(model, corpus.split("train"), cfg, nullptr);
      const auto ev = evaluate_model(model, corpus.split("test"), corpus.vocab, eval_options(cfg));
      w[balanced] = ev.report.conditions.at("clean").wer[minority];
    }
    wins += w[1] <= w[0];
    pairs += "seed " + std::to_string(seed) + ": balanced " + fmt("%.3f", w[1]) + " vs unbalanced " +
             fmt("%.3f", w[0]) + "; ";
  }
  return {wins >= 2, "minority L2 WER " + pairs + std::to_string(wins) + "/3 seeds balanced <= unbalanced"};
}

// Criterion 8
Outcome determinism(const Corpus& corpus) {
  RunConfig cfg = base_run(corpus);
  cfg.model.dtype = DType::f64;
  cfg.steps = 40;
  cfg.log_interval = 1;
  auto run = [&] {
    AvsrModel model(cfg.model);
    std::ostringstream log;
    train_model(model, corpus.split("train"), cfg, &log);
    return log.str();
  };
  const bool logs_same = run() == run();

  RunConfig c32 = base_run(corpus);
  c32.steps = 40;
  AvsrModel model(c32.model);
  train_model(model, corpus.split("train"), c32, nullptr);
  const std::string path = "acceptance_roundtrip.ckpt";
  save_checkpoint(path, model.store(), c32.model, corpus.vocab);
  EvalOptions opts = eval_options(c32);
  opts.noise_snr_db = 0.0;
  const auto direct = evaluate_model(model, corpus.split("test"), corpus.vocab, opts);
  const auto loaded = evaluate_checkpoint(path, corpus, "test", opts);
  std::remove(path.c_str());
  auto dump = [&](const Evaluation& e) {
    std::string s = report_json(e.report).dump();
    for (const auto& r : e.clean) s += utt_json(r, corpus.vocab).dump();
    for (const auto& r : e.noisy) s += utt_json(r, corpus.vocab).dump();
    return s;
  };
  const bool eval_same = dump(direct) == dump(loaded);
  return {logs_same && eval_same, std::string("f64 metric logs ") + (logs_same ? "identical" : "differ") +
                                      ", checkpoint round-trip evaluation " + (eval_same ? "identical" : "differs")};
}

// Full-matrix Levenshtein.
std::size_t dp_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
  return d[a.size()][b.size()];
}

// Criterion 9
Outcome decoding_contracts(const Corpus& corpus, AvsrModel* model) {
  if (!model) return {false, "no trained model (criterion 6 did not finish)"};
  NoGradGuard guard;
  const auto& test = corpus.split("test");
  std::size_t greedy_eq = 0, beam_ge = 0, pure_beam_ge = 0;
  for (const auto& u : test.utterances) {
    const auto enc = model->encode(u.audio, u.video, u.frames);
    const LanguageLabel lang = predict_language(model->classifier().classify(enc.e_av.values));
    const auto post = ctc_posteriors(enc.ctc_logits);
    const Tensor& mem = enc.e_av.values;

    DecodeOptions one{1, 0.0, 8, false};
    const auto g = greedy_decode(model->decoder(), mem, lang, 8, corpus.vocab);
    greedy_eq += beam_decode(model->decoder(), mem, post, lang, one, corpus.vocab).tokens == g;

    const double gs = score_hypothesis(model->decoder(), mem, post, lang, g, 0.1, corpus.vocab).joint;
    DecodeOptions four{4, 0.1, 8, true};
    beam_ge += beam_decode(model->decoder(), mem, post, lang, four, corpus.vocab).joint >= gs;
    four.include_greedy = false;
    pure_beam_ge += beam_decode(model->decoder(), mem, post, lang, four, corpus.vocab).joint >= gs;
  }

  std::mt19937_64 rng(9);
  std::size_t wer_eq = 0;
  for (int i = 0; i < 1000; ++i) {
    auto seq = [&] {
      std::vector<int> s(std::uniform_int_distribution<std::size_t>(1, 12)(rng));
      for (auto& x : s) x = std::uniform_int_distribution<int>(0, 5)(rng);
      return s;
    };
    const auto ref = seq(), hyp = seq();
    wer_eq += wer(ref, hyp) == static_cast<double>(dp_distance(ref, hyp)) / static_cast<double>(ref.size());
  }
  const std::size_t n = test.utterances.size();
  const bool ok = greedy_eq == n && beam_ge == n && wer_eq == 1000;
  return {ok, "beam1=greedy " + std::to_string(greedy_eq) + "/" + std::to_string(n) + ", beam4>=greedy " +
                  std::to_string(beam_ge) + "/" + std::to_string(n) + " (beam alone " +
                  std::to_string(pure_beam_ge) + "/" + std::to_string(n) + "), WER=oracle " +
                  std::to_string(wer_eq) + "/1000"};
}

}  // namespace

// Optional arguments select criteria by number, e.g. `acceptance 2 4`.
int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  const Corpus corpus = make_corpus();
  std::unique_ptr<AvsrModel> trained;
  report(1, ctc_sweep);
  report(2, gradient_suite);
  report(3, prompt_mechanics);
  report(4, balancing);
  report(5, [&] { return language_id(corpus); });
  report(6, [&] { return end_to_end(corpus, trained); });
  report(7, imbalance);
  report(8, [&] { return determinism(corpus); });
  report(9, [&] { return decoding_contracts(corpus, trained.get()); });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
