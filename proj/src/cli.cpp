#include "polyavsr/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "polyavsr/checkpoint.hpp"
#include "polyavsr/evaluate.hpp"
#include "polyavsr/trainer.hpp"

namespace polyavsr {

using nlohmann::json;

namespace {

template <class T>
void apply(std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("POLYAVSR_THREADS");
  if (!v || !*v) return 1;
  try {
    const long n = std::stol(v);
    if (n < 1) throw std::invalid_argument("non-positive");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw UsageError(std::string("POLYAVSR_THREADS must be a positive integer, got '") + v + "'");
  }
}

// Flags shared by train, eval and decode that land in RunConfig.
struct RunFlags {
  std::optional<std::string> config, corpus, out, precision;
  std::optional<std::size_t> steps, batch_size, beam, max_len, prompts, d_model, log_interval,
      checkpoint_interval, warmup_steps, enc_layers, dec_layers;
  std::optional<double> lr, alpha, beta, ctc_weight, warmup_fraction;
  std::optional<std::uint64_t> seed, noise_seed;
  bool no_balance = false, freeze = false;
};

void add_decode_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--beam", f.beam, "beam width");
  app->add_option("--ctc-weight", f.ctc_weight, "CTC weight in joint decoding scores");
  app->add_option("--max-len", f.max_len, "maximum hypothesis length in tokens");
  app->add_option("--noise-seed", f.noise_seed, "seed for noise injection");
}

RunConfig merge(const RunFlags& f_in) {
  RunFlags f = f_in;
  RunConfig c = f.config ? load_run_config(*f.config) : RunConfig{};
  apply(f.corpus, c.corpus_dir);
  apply(f.out, c.out_dir);
  apply(f.steps, c.steps);
  apply(f.batch_size, c.batch_size);
  apply(f.beam, c.beam);
  apply(f.max_len, c.max_decode_len);
  apply(f.prompts, c.model.prompt_count);
  apply(f.d_model, c.model.d_model);
  apply(f.enc_layers, c.model.encoder_layers);
  apply(f.dec_layers, c.model.decoder_layers);
  apply(f.log_interval, c.log_interval);
  apply(f.checkpoint_interval, c.checkpoint_interval);
  apply(f.warmup_steps, c.classifier_warmup_steps);
  apply(f.lr, c.lr);
  apply(f.alpha, c.alpha);
  apply(f.beta, c.beta);
  apply(f.ctc_weight, c.ctc_weight);
  apply(f.warmup_fraction, c.warmup_fraction);
  apply(f.seed, c.seed);
  apply(f.noise_seed, c.noise_seed);
  if (f.seed) c.model.seed = *f.seed;
  if (f.precision) c.model.dtype = parse_dtype(*f.precision);
  if (f.no_balance) c.balance_enabled = false;
  if (f.freeze) c.freeze_backbone = true;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return c;
}

EvalOptions eval_options(const Command& cmd) {
  EvalOptions o;
  o.decode.beam = cmd.run.beam;
  o.decode.ctc_weight = cmd.run.ctc_weight;
  o.decode.max_len = cmd.run.max_decode_len;
  o.noise_snr_db = cmd.noise_snr_db;
  o.noise_seed = cmd.run.noise_seed;
  o.threads = cmd.threads;
  return o;
}

}  // namespace

Command parse_command(const std::vector<std::string>& args) {
  CLI::App app{"Multilingual audio-visual speech recognition toolkit", "polyavsr"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Command cmd;
  RunFlags rf;

  // corpus-gen
  std::optional<std::string> cg_config;
  std::optional<std::size_t> cg_langs, cg_vocab, cg_train, cg_valid, cg_test, cg_min, cg_max;
  std::optional<double> cg_overlap, cg_jitter;
  std::optional<std::uint64_t> cg_seed;
  std::vector<double> cg_ratios;
  auto* gen = app.add_subcommand("corpus-gen", "generate a synthetic multilingual corpus");
  gen->add_option("--out", cmd.out, "output directory")->required();
  gen->add_option("--config", cg_config, "corpus config JSON");
  gen->add_option("--seed", cg_seed, "generator seed");
  gen->add_option("--languages", cg_langs, "number of languages");
  gen->add_option("--vocab-per-lang", cg_vocab, "content tokens per language");
  gen->add_option("--overlap", cg_overlap, "share of tokens common to all languages");
  gen->add_option("--train-total", cg_train, "training utterances");
  gen->add_option("--ratios", cg_ratios, "training language ratios, comma separated")
      ->delimiter(',');
  gen->add_option("--valid-per-lang", cg_valid, "validation utterances per language");
  gen->add_option("--test-per-lang", cg_test, "test utterances per language");
  gen->add_option("--min-len", cg_min, "minimum tokens per utterance");
  gen->add_option("--max-len", cg_max, "maximum tokens per utterance");
  gen->add_option("--jitter", cg_jitter, "pattern jitter standard deviation");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", rf.config, "run config JSON");
  tr->add_option("--corpus", rf.corpus, "corpus directory");
  tr->add_option("--out", rf.out, "run output directory");
  tr->add_option("--steps", rf.steps, "optimizer steps");
  tr->add_option("--batch-size", rf.batch_size, "utterances per batch");
  tr->add_option("--lr", rf.lr, "learning rate");
  tr->add_option("--warmup-fraction", rf.warmup_fraction, "share of steps with linear lr warm-up");
  tr->add_option("--seed", rf.seed, "run seed (model init and batches)");
  tr->add_option("--alpha", rf.alpha, "CTC share of the recognition loss");
  tr->add_option("--beta", rf.beta, "classification loss weight");
  tr->add_option("--ctc-weight", rf.ctc_weight, "CTC weight in joint decoding scores");
  tr->add_option("--prompts", rf.prompts, "prompt vectors per encoder layer");
  tr->add_option("--d-model", rf.d_model, "model width");
  tr->add_option("--encoder-layers", rf.enc_layers, "encoder depth");
  tr->add_option("--decoder-layers", rf.dec_layers, "decoder depth");
  tr->add_option("--precision", rf.precision, "f32 or f64");
  tr->add_option("--classifier-warmup-steps", rf.warmup_steps,
                 "leading steps that train only prompts and classifier");
  tr->add_option("--log-interval", rf.log_interval, "steps between metric records");
  tr->add_option("--checkpoint-interval", rf.checkpoint_interval, "steps between checkpoints");
  tr->add_flag("--no-balance", rf.no_balance, "disable per-language loss balancing");
  tr->add_flag("--freeze-backbone", rf.freeze, "freeze frontends and encoder");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  auto* dec = app.add_subcommand("decode", "decode a split to JSON Lines");
  for (auto* sub : {ev, dec}) {
    sub->add_option("--ckpt", cmd.checkpoint, "checkpoint file")->required();
    sub->add_option("--config", rf.config, "run config JSON");
    sub->add_option("--corpus", rf.corpus, "corpus directory");
    sub->add_option("--split", cmd.split, "split name");
    sub->add_option("--noise-snr", cmd.noise_snr_db, "add Gaussian audio noise at this SNR (dB)");
    add_decode_flags(sub, rf);
  }
  ev->add_option("--out", cmd.out, "write <out>.txt and <out>.json reports");
  dec->add_option("--out", cmd.out, "output JSON Lines file")->required();

  auto* insp = app.add_subcommand("inspect", "summarize a corpus or checkpoint");
  std::optional<std::string> insp_corpus;
  insp->add_option("--corpus", insp_corpus, "corpus directory");
  insp->add_option("--ckpt", cmd.checkpoint, "checkpoint file");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    cmd.help = true;
    cmd.help_text = app.help();
    return cmd;
  } catch (const CLI::CallForAllHelp&) {
    cmd.help = true;
    cmd.help_text = app.help("", CLI::AppFormatMode::All);
    return cmd;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  cmd.threads = threads_from_env();

  if (gen->parsed()) {
    cmd.kind = CommandKind::corpus_gen;
    try {
      if (cg_config) cmd.corpus = load_corpus_config(*cg_config);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    auto& c = cmd.corpus;
    apply(cg_seed, c.seed);
    apply(cg_langs, c.num_languages);
    apply(cg_vocab, c.vocab_per_lang);
    apply(cg_overlap, c.overlap_fraction);
    apply(cg_train, c.train_total);
    apply(cg_valid, c.valid_per_lang);
    apply(cg_test, c.test_per_lang);
    apply(cg_min, c.min_len);
    apply(cg_max, c.max_len);
    apply(cg_jitter, c.jitter_std);
    if (!cg_ratios.empty()) c.train_ratios = cg_ratios;
  } else if (tr->parsed()) {
    cmd.kind = CommandKind::train;
    cmd.run = merge(rf);
    if (cmd.run.corpus_dir.empty()) throw UsageError("--corpus is required (flag or config)");
  } else if (ev->parsed() || dec->parsed()) {
    cmd.kind = ev->parsed() ? CommandKind::eval : CommandKind::decode;
    cmd.run = merge(rf);
    // The corpus may still be missing here; run_command rejects that.
  } else {
    cmd.kind = CommandKind::inspect;
    if (insp_corpus) cmd.run.corpus_dir = *insp_corpus;
    if (cmd.run.corpus_dir.empty() && cmd.checkpoint.empty())
      throw UsageError("inspect needs --corpus or --ckpt");
  }
  return cmd;
}

namespace {
void require_corpus(const Command& cmd) {
  if (cmd.run.corpus_dir.empty()) throw UsageError("--corpus is required (flag or config)");
}
}  // namespace

int run_command(const Command& cmd, std::ostream& out, std::ostream& err) {
  if (cmd.help) {
    out << cmd.help_text;
    return 0;
  }
  switch (cmd.kind) {
    case CommandKind::corpus_gen: {
      const Corpus corpus = make_splits(build_language_specs(cmd.corpus), cmd.corpus);
      write_corpus(corpus, cmd.out);
      out << "wrote corpus to " << cmd.out << '\n' << inspect_corpus(corpus);
      return 0;
    }
    case CommandKind::train: {
      const TrainSummary s = train(cmd.run);
      const std::filesystem::path dir(cmd.run.out_dir);
      out << "trained " << s.history.size() << " steps";
      if (!s.history.empty()) out << ", final loss " << s.history.back().loss_total;
      out << ", skipped " << s.skipped << " samples\n";
      out << "checkpoint: " << (dir / "final.ckpt").string() << '\n';
      out << "metrics: " << (dir / "metrics.jsonl").string() << '\n';
      return 0;
    }
    case CommandKind::eval: {
      require_corpus(cmd);
      const Corpus corpus = load_corpus(cmd.run.corpus_dir);
      const Evaluation ev = evaluate_checkpoint(cmd.checkpoint, corpus, cmd.split, eval_options(cmd));
      const std::string table = render_table(ev.report);
      out << table;
      if (!cmd.out.empty()) {
        std::ofstream(cmd.out + ".txt") << table;
        std::ofstream(cmd.out + ".json") << report_json(ev.report).dump(2) << '\n';
      }
      return 0;
    }
    case CommandKind::decode: {
      require_corpus(cmd);
      const Corpus corpus = load_corpus(cmd.run.corpus_dir);
      const Evaluation ev = evaluate_checkpoint(cmd.checkpoint, corpus, cmd.split, eval_options(cmd));
      std::ofstream os(cmd.out);
      if (!os) {
        err << "cannot write " << cmd.out << '\n';
        return 1;
      }
      for (const auto& r : cmd.noise_snr_db ? ev.noisy : ev.clean)
        os << utt_json(r, corpus.vocab).dump() << '\n';
      out << "decoded " << ev.clean.size() << " utterances to " << cmd.out << '\n';
      return 0;
    }
    case CommandKind::inspect: {
      if (!cmd.run.corpus_dir.empty()) out << inspect_corpus(load_corpus(cmd.run.corpus_dir));
      if (!cmd.checkpoint.empty()) {
        const Checkpoint ck = load_checkpoint(cmd.checkpoint);
        std::size_t values = 0;
        for (const auto& [_, e] : ck.entries) values += e.values.size();
        out << "checkpoint " << cmd.checkpoint << ": " << ck.entries.size() << " tensors, "
            << values << " values, vocab " << ck.vocab.size() << ", languages "
            << ck.vocab.num_languages() << '\n'
            << json(ck.model).dump(2) << '\n';
      }
      return 0;
    }
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Command cmd;
  try {
    cmd = parse_command(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n(run with --help for usage)\n";
    return 2;
  }
  try {
    return run_command(cmd, std::cout, std::cerr);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace polyavsr
