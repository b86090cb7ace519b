#include "polyavsr/config.hpp"

#include <fstream>

namespace polyavsr {

using nlohmann::json;

void RunConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("ctc_weight must lie in [0, 1]");
  if (beam < 1) throw ConfigError("beam must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (model.d_model == 0 || model.encoder_layers == 0 || model.decoder_layers == 0)
    throw ConfigError("model dimensions must be positive");
  if (model.d_model % model.encoder_heads != 0 || model.d_model % model.decoder_heads != 0)
    throw ConfigError("d_model must be divisible by the head counts");
  if (log_interval == 0) throw ConfigError("log_interval must be positive");
}

DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "float32") return DType::f32;
  if (s == "f64" || s == "float64") return DType::f64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"d_model", c.d_model},
           {"prompt_count", c.prompt_count},
           {"encoder_layers", c.encoder_layers},
           {"encoder_heads", c.encoder_heads},
           {"ff_mult", c.ff_mult},
           {"decoder_layers", c.decoder_layers},
           {"decoder_heads", c.decoder_heads},
           {"audio_downsample", c.audio_downsample},
           {"audio_channels", c.audio_channels},
           {"frame_height", c.frame_height},
           {"frame_width", c.frame_width},
           {"frame_channels", c.frame_channels},
           {"video_channels", c.video_channels},
           {"num_languages", c.num_languages},
           {"vocab_size", c.vocab_size},
           {"precision", dtype_name(c.dtype)},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.prompt_count = j.value("prompt_count", d.prompt_count);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.encoder_heads = j.value("encoder_heads", d.encoder_heads);
  c.ff_mult = j.value("ff_mult", d.ff_mult);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.decoder_heads = j.value("decoder_heads", d.decoder_heads);
  c.audio_downsample = j.value("audio_downsample", d.audio_downsample);
  c.audio_channels = j.value("audio_channels", d.audio_channels);
  c.frame_height = j.value("frame_height", d.frame_height);
  c.frame_width = j.value("frame_width", d.frame_width);
  c.frame_channels = j.value("frame_channels", d.frame_channels);
  c.video_channels = j.value("video_channels", d.video_channels);
  c.num_languages = j.value("num_languages", d.num_languages);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.dtype = parse_dtype(j.value("precision", std::string(dtype_name(d.dtype))));
  c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const CorpusConfig& c) {
  j = json{{"num_languages", c.num_languages},
           {"vocab_per_lang", c.vocab_per_lang},
           {"overlap_fraction", c.overlap_fraction},
           {"vocab_capacity", c.vocab_capacity},
           {"frames_per_token", c.frames_per_token},
           {"audio_downsample", c.audio_downsample},
           {"frame_height", c.frame_height},
           {"frame_width", c.frame_width},
           {"frame_channels", c.frame_channels},
           {"jitter_std", c.jitter_std},
           {"min_len", c.min_len},
           {"max_len", c.max_len},
           {"train_total", c.train_total},
           {"train_ratios", c.train_ratios},
           {"valid_per_lang", c.valid_per_lang},
           {"test_per_lang", c.test_per_lang},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.num_languages = j.value("num_languages", d.num_languages);
  c.vocab_per_lang = j.value("vocab_per_lang", d.vocab_per_lang);
  c.overlap_fraction = j.value("overlap_fraction", d.overlap_fraction);
  c.vocab_capacity = j.value("vocab_capacity", d.vocab_capacity);
  c.frames_per_token = j.value("frames_per_token", d.frames_per_token);
  c.audio_downsample = j.value("audio_downsample", d.audio_downsample);
  c.frame_height = j.value("frame_height", d.frame_height);
  c.frame_width = j.value("frame_width", d.frame_width);
  c.frame_channels = j.value("frame_channels", d.frame_channels);
  c.jitter_std = j.value("jitter_std", d.jitter_std);
  c.min_len = j.value("min_len", d.min_len);
  c.max_len = j.value("max_len", d.max_len);
  c.train_total = j.value("train_total", d.train_total);
  c.train_ratios = j.value("train_ratios", d.train_ratios);
  c.valid_per_lang = j.value("valid_per_lang", d.valid_per_lang);
  c.test_per_lang = j.value("test_per_lang", d.test_per_lang);
  c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"corpus", c.corpus_dir},
           {"out", c.out_dir},
           {"model", c.model},
           {"alpha", c.alpha},
           {"beta", c.beta},
           {"ctc_weight", c.ctc_weight},
           {"beam", c.beam},
           {"max_decode_len", c.max_decode_len},
           {"batch_size", c.batch_size},
           {"steps", c.steps},
           {"lr", c.lr},
           {"warmup_fraction", c.warmup_fraction},
           {"seed", c.seed},
           {"freeze_backbone", c.freeze_backbone},
           {"classifier_warmup_steps", c.classifier_warmup_steps},
           {"balance_enabled", c.balance_enabled},
           {"noise_seed", c.noise_seed},
           {"log_interval", c.log_interval},
           {"checkpoint_interval", c.checkpoint_interval}};
  j["noise_snr_db"] = c.noise_snr_db ? json(*c.noise_snr_db) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  RunConfig d;
  c.corpus_dir = j.value("corpus", d.corpus_dir);
  c.out_dir = j.value("out", d.out_dir);
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.ctc_weight = j.value("ctc_weight", d.ctc_weight);
  c.beam = j.value("beam", d.beam);
  c.max_decode_len = j.value("max_decode_len", d.max_decode_len);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps = j.value("steps", d.steps);
  c.lr = j.value("lr", d.lr);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.seed = j.value("seed", d.seed);
  c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
  c.classifier_warmup_steps = j.value("classifier_warmup_steps", d.classifier_warmup_steps);
  c.balance_enabled = j.value("balance_enabled", d.balance_enabled);
  c.noise_seed = j.value("noise_seed", d.noise_seed);
  c.log_interval = j.value("log_interval", d.log_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  if (j.contains("noise_snr_db") && !j.at("noise_snr_db").is_null())
    c.noise_snr_db = j.at("noise_snr_db").get<double>();
}

namespace {
json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}
}  // namespace

RunConfig load_run_config(const std::string& path) {
  return read_json_file(path).get<RunConfig>();
}

CorpusConfig load_corpus_config(const std::string& path) {
  return read_json_file(path).get<CorpusConfig>();
}

}  // namespace polyavsr
