#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyavsr/corpus.hpp"
#include "polyavsr/decoding.hpp"
#include "polyavsr/model.hpp"

namespace polyavsr {

struct UttResult {
  std::string utt_id;
  int lang_gt = 0;
  int lang_pred = 0;
  TokenSeq ref;
  TokenSeq hyp;
  double wer = 0;
  double att_score = 0;
  double ctc_score = 0;
  double joint = 0;
  bool skipped = false;  // reference cannot be emitted under CTC in T frames
};

// One row group of the report (clean or noisy).
struct ConditionMetrics {
  std::vector<double> wer;           // per language, fraction
  std::vector<std::size_t> errors;   // edit operations per language
  std::vector<std::size_t> words;    // reference tokens per language
  std::vector<std::size_t> utterances;
  double avg = 0;                    // mean of per-language WER
  double lang_acc = 0;
  std::size_t skipped = 0;
};

struct MetricReport {
  std::vector<std::string> languages;       // display codes
  std::map<std::string, ConditionMetrics> conditions;  // "clean", "noisy"
};

struct EvalOptions {
  DecodeOptions decode;
  std::optional<double> noise_snr_db;
  std::uint64_t noise_seed = 7;
  // Utterances are split round-robin over this many threads; results keep
  // split order.
  std::size_t threads = 1;
};

// Decodes every utterance of the split. The language predicted by the
// classifier selects the decoder's language token.
std::vector<UttResult> decode_split(AvsrModel& model, const Split& split, const Vocab& vocab,
                                    const EvalOptions& opts);

// Per-language WER is total edits over total reference tokens of that
// language; skipped utterances are excluded from WER but counted.
ConditionMetrics summarize(const std::vector<UttResult>& results, std::size_t num_languages);

MetricReport make_report(std::size_t num_languages);

struct Evaluation {
  MetricReport report;
  std::vector<UttResult> clean;
  std::vector<UttResult> noisy;  // empty without noise_snr_db
};

// Clean decoding always; a noisy pass as well when opts.noise_snr_db is set.
Evaluation evaluate_model(AvsrModel& model, const Split& split, const Vocab& vocab,
                          const EvalOptions& opts);

// Loads the checkpoint, checks its vocabulary against the corpus and
// evaluates the named split.
Evaluation evaluate_checkpoint(const std::string& checkpoint, const Corpus& corpus,
                               const std::string& split, const EvalOptions& opts);

std::string render_table(const MetricReport& report);
nlohmann::json report_json(const MetricReport& report);
nlohmann::json utt_json(const UttResult& r, const Vocab& vocab);

}  // namespace polyavsr
