#include "polyavsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "polyavsr/checkpoint.hpp"
#include "polyavsr/ops.hpp"

namespace polyavsr {

using nlohmann::json;

json to_json_record(const StepRecord& r) {
  return json{{"step", r.step},         {"loss_total", r.loss_total}, {"loss_ctc", r.loss_ctc},
              {"loss_att", r.loss_att}, {"loss_cls", r.loss_cls},     {"lang_acc", r.lang_acc},
              {"lr", r.lr},             {"skipped", r.skipped},
              {"stage", r.classifier_stage ? "classifier" : "joint"}};
}

Trainer::Trainer(AvsrModel& model, const Split& train, const RunConfig& cfg)
    : model_(model), train_(train), cfg_(cfg), rng_(derived_rng(cfg.seed, "batches")) {
  cfg_.validate();
  if (train_.utterances.empty()) throw ConfigError("training split is empty");
  model_.freeze_backbone(cfg_.freeze_backbone);
  AdamConfig ac;
  ac.lr = cfg_.lr;
  if (cfg_.classifier_warmup_steps > 0) {
    std::vector<NamedTensor> warm = model_.store().with_prefix("prompts.");
    for (auto& p : model_.store().with_prefix("classifier.")) warm.push_back(p);
    warm_opt_ = std::make_unique<Adam>(warm, ac);
  }
  if (cfg_.steps > cfg_.classifier_warmup_steps)
    main_opt_ = std::make_unique<Adam>(model_.store().trainable(), ac);
}

double Trainer::lr_at(std::size_t step) const {
  const auto warm = static_cast<std::size_t>(
      std::ceil(cfg_.warmup_fraction * static_cast<double>(cfg_.steps)));
  if (warm == 0 || step >= warm) return cfg_.lr;
  return cfg_.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
}

StepRecord Trainer::step() {
  std::uniform_int_distribution<std::size_t> pick(0, train_.utterances.size() - 1);
  std::vector<const Utterance*> batch;
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(&train_.utterances[pick(rng_)]);
  const bool cls_stage = done_ < cfg_.classifier_warmup_steps;

  // The classifier stage updates only prompts and classifier; gradients for
  // everything else are switched off for speed and restored afterwards.
  if (cls_stage) {
    model_.store().set_trainable("", false);
    model_.store().set_trainable("prompts.", true);
    model_.store().set_trainable("classifier.", true);
  }
  StepRecord rec;
  try {
    rec = run_batch(batch, cls_stage);
  } catch (...) {
    if (cls_stage) {
      model_.store().set_trainable("", true);
      model_.freeze_backbone(cfg_.freeze_backbone);
    }
    throw;
  }
  if (cls_stage) {
    model_.store().set_trainable("", true);
    model_.freeze_backbone(cfg_.freeze_backbone);
  }
  ++done_;
  rec.step = done_;
  skipped_total_ += rec.skipped;
  return rec;
}

StepRecord Trainer::run_batch(const std::vector<const Utterance*>& batch, bool cls_stage) {
  const std::size_t B = batch.size();

  std::vector<Encoded> enc;
  std::vector<Tensor> e_avs;
  std::vector<LanguageLabel> labels;
  for (const Utterance* u : batch) {
    enc.push_back(model_.encode(u->audio, u->video, u->frames));
    e_avs.push_back(enc.back().e_av.values);
    labels.push_back({u->language});
  }
  const std::vector<Tensor> logits = model_.classifier().classify_batch(e_avs, NormMode::train);

  std::vector<double> gamma(B, 1.0);
  if (cfg_.balance_enabled) gamma = balance_weights(labels);

  StepRecord rec;
  rec.classifier_stage = cls_stage;
  rec.lr = lr_at(done_);

  auto batch_ids = [&] {
    std::string ids;
    for (const Utterance* u : batch) ids += (ids.empty() ? "" : ", ") + u->utt_id;
    return ids;
  };

  std::vector<Tensor> terms;
  std::size_t correct = 0, used = 0;
  const LossWeights w{cfg_.alpha, cfg_.beta};
  for (std::size_t i = 0; i < B; ++i) {
    const Utterance& u = *batch[i];
    if (predict_language(logits[i]).id == u.language) ++correct;
    Tensor cls = class_loss(logits[i], labels[i]);
    if (cls_stage) {
      rec.loss_cls += cls.item();
      terms.push_back(scale(cls, gamma[i]));
      ++used;
      continue;
    }
    Tensor ctc = ctc_loss_op(enc[i].ctc_logits, u.tokens);
    if (!std::isfinite(ctc.item())) {
      ++rec.skipped;
      continue;
    }
    // Teacher forcing with the ground-truth language token.
    std::vector<int> prefix{Vocab::kSos, Vocab::kFirstLanguage + u.language};
    prefix.insert(prefix.end(), u.tokens.begin(), u.tokens.end());
    std::vector<int> target(u.tokens.begin(), u.tokens.end());
    target.push_back(Vocab::kEos);
    // Rows 1.. predict y1..y_n, <eos>; row 0 (after <sos>) would predict the
    // language token and is not trained.
    const Tensor rows = model_.decoder().forward(prefix, enc[i].e_av.values);
    Tensor att = attention_loss(slice_rows(rows, 1, rows.dim(0) - 1), target);
    rec.loss_ctc += ctc.item();
    rec.loss_att += att.item();
    rec.loss_cls += cls.item();
    try {
      terms.push_back(total_loss(ctc, att, cls, gamma[i], w));
    } catch (const NonFiniteLossError& e) {
      throw NonFiniteLossError(std::string(e.what()) + " for " + u.utt_id + " at step " +
                               std::to_string(done_ + 1) + " in batch [" + batch_ids() + "]");
    }
    ++used;
  }
  rec.lang_acc = static_cast<double>(correct) / static_cast<double>(B);
  if (used == 0) return rec;

  const double inv = 1.0 / static_cast<double>(used);
  Tensor loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
  loss = scale(loss, inv);
  rec.loss_total = loss.item();
  rec.loss_ctc *= inv;
  rec.loss_att *= inv;
  rec.loss_cls *= inv;

  if (!std::isfinite(rec.loss_total))
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(done_ + 1) +
                             " in batch [" + batch_ids() + "]");

  Adam& opt = cls_stage ? *warm_opt_ : *main_opt_;
  opt.zero_grad();
  backward(loss);
  opt.set_lr(rec.lr);
  opt.step();
  model_.store().zero_grad();
  return rec;
}

TrainSummary train_model(AvsrModel& model, const Split& train, const RunConfig& cfg,
                         std::ostream* log, const CheckpointHook& on_checkpoint) {
  Trainer trainer(model, train, cfg);
  TrainSummary out;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    StepRecord r = trainer.step();
    out.history.push_back(r);
    if (log && (r.step % cfg.log_interval == 0 || r.step == cfg.steps))
      *log << to_json_record(r).dump() << '\n' << std::flush;
    if (on_checkpoint && cfg.checkpoint_interval > 0 && r.step % cfg.checkpoint_interval == 0 &&
        r.step != cfg.steps)
      on_checkpoint(r.step);
  }
  out.skipped = trainer.skipped_total();
  return out;
}

ModelConfig fit_model_to_corpus(ModelConfig m, const Corpus& corpus) {
  m.vocab_size = corpus.vocab.size();
  m.num_languages = corpus.vocab.num_languages();
  m.audio_downsample = corpus.config.audio_downsample;
  m.frame_height = corpus.config.frame_height;
  m.frame_width = corpus.config.frame_width;
  m.frame_channels = corpus.config.frame_channels;
  return m;
}

TrainSummary train(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.corpus_dir.empty()) throw ConfigError("no corpus directory given");
  const Corpus corpus = load_corpus(cfg.corpus_dir);
  cfg.model = fit_model_to_corpus(cfg.model, corpus);
  AvsrModel model(cfg.model);

  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);
  std::ofstream(out / "config.json") << json(cfg).dump(2) << '\n';
  std::ofstream log(out / "metrics.jsonl");
  auto save = [&](std::size_t step) {
    save_checkpoint(out / ("step" + std::to_string(step) + ".ckpt"), model.store(), cfg.model,
                    corpus.vocab);
  };
  TrainSummary s = train_model(model, corpus.split("train"), cfg, &log, save);
  save_checkpoint(out / "final.ckpt", model.store(), cfg.model, corpus.vocab);
  return s;
}

}  // namespace polyavsr
