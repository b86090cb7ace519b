#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <vector>

#include "polyavsr/config.hpp"
#include "polyavsr/corpus.hpp"
#include "polyavsr/losses.hpp"
#include "polyavsr/model.hpp"
#include "polyavsr/optim.hpp"

namespace polyavsr {

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss_total = 0;
  double loss_ctc = 0;
  double loss_att = 0;
  double loss_cls = 0;
  double lang_acc = 0;
  double lr = 0;
  std::size_t skipped = 0;
  bool classifier_stage = false;
};

nlohmann::json to_json_record(const StepRecord& r);

// Owns the optimizers and the batch sampler for one training run. Each step
// draws batch_size utterances uniformly (with replacement) from the split.
class Trainer {
 public:
  Trainer(AvsrModel& model, const Split& train, const RunConfig& cfg);

  StepRecord step();
  std::size_t steps_done() const { return done_; }
  std::size_t skipped_total() const { return skipped_total_; }
  double lr_at(std::size_t step) const;  // 0-based step index

 private:
  StepRecord run_batch(const std::vector<const Utterance*>& batch, bool classifier_stage);

  AvsrModel& model_;
  const Split& train_;
  RunConfig cfg_;
  std::mt19937_64 rng_;
  std::unique_ptr<Adam> warm_opt_;
  std::unique_ptr<Adam> main_opt_;
  std::size_t done_ = 0;
  std::size_t skipped_total_ = 0;
};

struct TrainSummary {
  std::vector<StepRecord> history;  // every step
  std::size_t skipped = 0;
};

using CheckpointHook = std::function<void(std::size_t step)>;

// Runs cfg.steps steps, writing one JSON line per log interval (and for the
// last step) to `log`, which may be null.
TrainSummary train_model(AvsrModel& model, const Split& train, const RunConfig& cfg,
                         std::ostream* log, const CheckpointHook& on_checkpoint = {});

// Copies vocabulary size, language count and input geometry from the corpus.
ModelConfig fit_model_to_corpus(ModelConfig m, const Corpus& corpus);

// Loads the corpus, builds a fresh model and writes <out>/metrics.jsonl,
// <out>/config.json, <out>/final.ckpt (+ step checkpoints).
TrainSummary train(const RunConfig& cfg);

}  // namespace polyavsr
