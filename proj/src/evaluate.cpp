#include "polyavsr/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>
#include <thread>

#include "polyavsr/checkpoint.hpp"
#include "polyavsr/losses.hpp"
#include "polyavsr/wer.hpp"

namespace polyavsr {

using nlohmann::json;

namespace {

UttResult decode_one(AvsrModel& model, const Utterance& u, const Vocab& vocab,
                     const EvalOptions& opts) {
  NoGradGuard no_grad;
  std::vector<float> audio = u.audio;
  if (opts.noise_snr_db) {
    auto rng = derived_rng(opts.noise_seed, "noise/" + u.utt_id);
    audio = inject_noise(audio, *opts.noise_snr_db, rng);
  }
  const Encoded enc = model.encode(audio, u.video, u.frames);
  const LanguageLabel lang =
      predict_language(model.classifier().classify(enc.e_av.values, NormMode::eval));
  const CtcPosteriors post = ctc_posteriors(enc.ctc_logits);

  UttResult r;
  r.utt_id = u.utt_id;
  r.lang_gt = u.language;
  r.lang_pred = lang.id;
  r.ref = u.tokens;
  r.skipped = std::isinf(ctc_loss(post.log_probs, post.frames, post.vocab, u.tokens));
  const Hypothesis h = beam_decode(model.decoder(), enc.e_av.values, post, lang, opts.decode, vocab);
  r.hyp = h.tokens;
  r.att_score = h.att_score;
  r.ctc_score = h.ctc_score;
  r.joint = h.joint;
  r.wer = wer(r.ref, r.hyp);
  return r;
}

}  // namespace

std::vector<UttResult> decode_split(AvsrModel& model, const Split& split, const Vocab& vocab,
                                    const EvalOptions& opts) {
  const std::size_t n = split.utterances.size();
  std::vector<UttResult> out(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = decode_one(model, split.utterances[i], vocab, opts);
    return out;
  }
  // Eval-mode forward passes only read parameters.
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers)
          out[i] = decode_one(model, split.utterances[i], vocab, opts);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

ConditionMetrics summarize(const std::vector<UttResult>& results, std::size_t num_languages) {
  ConditionMetrics m;
  m.wer.assign(num_languages, 0.0);
  m.errors.assign(num_languages, 0);
  m.words.assign(num_languages, 0);
  m.utterances.assign(num_languages, 0);
  std::size_t correct = 0;
  for (const auto& r : results) {
    if (r.lang_pred == r.lang_gt) ++correct;
    const auto l = static_cast<std::size_t>(r.lang_gt);
    if (l >= num_languages) throw LabelError("result language " + std::to_string(r.lang_gt) + " out of range");
    if (r.skipped) {
      ++m.skipped;
      continue;
    }
    ++m.utterances[l];
    m.errors[l] += edit_distance(r.ref, r.hyp);
    m.words[l] += r.ref.size();
  }
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t l = 0; l < num_languages; ++l) {
    if (m.words[l] == 0) {
      m.wer[l] = std::nan("");
      continue;
    }
    m.wer[l] = static_cast<double>(m.errors[l]) / static_cast<double>(m.words[l]);
    sum += m.wer[l];
    ++present;
  }
  m.avg = present ? sum / static_cast<double>(present) : std::nan("");
  m.lang_acc = results.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(results.size());
  return m;
}

MetricReport make_report(std::size_t num_languages) {
  MetricReport r;
  for (std::size_t l = 0; l < num_languages; ++l) r.languages.push_back(LanguageLabel{static_cast<int>(l)}.code());
  return r;
}

Evaluation evaluate_model(AvsrModel& model, const Split& split, const Vocab& vocab,
                          const EvalOptions& opts) {
  Evaluation ev;
  ev.report = make_report(vocab.num_languages());
  EvalOptions clean = opts;
  clean.noise_snr_db.reset();
  ev.clean = decode_split(model, split, vocab, clean);
  ev.report.conditions["clean"] = summarize(ev.clean, vocab.num_languages());
  if (opts.noise_snr_db) {
    ev.noisy = decode_split(model, split, vocab, opts);
    ev.report.conditions["noisy"] = summarize(ev.noisy, vocab.num_languages());
  }
  return ev;
}

Evaluation evaluate_checkpoint(const std::string& checkpoint, const Corpus& corpus,
                               const std::string& split, const EvalOptions& opts) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  require_same_vocab(ck.vocab, corpus.vocab);
  AvsrModel model(ck.model);
  restore_into(model.store(), ck);
  return evaluate_model(model, corpus.split(split), corpus.vocab, opts);
}

std::string render_table(const MetricReport& report) {
  std::ostringstream os;
  const int w = 9;
  os << std::left << std::setw(8) << "WER(%)" << std::right;
  for (const auto& code : report.languages) os << std::setw(w) << code;
  os << std::setw(w) << "Avg" << std::setw(w) << "LangAcc" << std::setw(w) << "Skipped" << '\n';
  for (const char* cond : {"clean", "noisy"}) {
    auto it = report.conditions.find(cond);
    if (it == report.conditions.end()) continue;
    const auto& c = it->second;
    std::string label = cond;
    label[0] = static_cast<char>(std::toupper(label[0]));
    os << std::left << std::setw(8) << label << std::right << std::fixed << std::setprecision(2);
    for (double v : c.wer) {
      if (std::isnan(v)) os << std::setw(w) << "-";
      else os << std::setw(w) << 100.0 * v;
    }
    os << std::setw(w) << 100.0 * c.avg << std::setw(w) << 100.0 * c.lang_acc << std::setw(w)
       << c.skipped << '\n';
  }
  return os.str();
}

json report_json(const MetricReport& report) {
  json j{{"languages", report.languages}};
  for (const auto& [name, c] : report.conditions) {
    json wers = json::object();
    for (std::size_t l = 0; l < c.wer.size(); ++l)
      wers[report.languages[l]] = std::isnan(c.wer[l]) ? json(nullptr) : json(c.wer[l]);
    j[name] = {{"wer", wers},
               {"avg", c.avg},
               {"lang_acc", c.lang_acc},
               {"skipped", c.skipped},
               {"errors", c.errors},
               {"words", c.words},
               {"utterances", c.utterances}};
  }
  return j;
}

json utt_json(const UttResult& r, const Vocab& vocab) {
  return json{{"utt_id", r.utt_id},
              {"lang_gt", LanguageLabel{r.lang_gt}.code()},
              {"lang_pred", LanguageLabel{r.lang_pred}.code()},
              {"ref", vocab.decode(r.ref)},
              {"hyp", vocab.decode(r.hyp)},
              {"wer", r.wer},
              {"att_score", r.att_score},
              {"ctc_score", r.ctc_score}};
}

}  // namespace polyavsr
