#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "polyavsr/corpus.hpp"
#include "polyavsr/model_config.hpp"

namespace polyavsr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::string corpus_dir;
  std::string out_dir = "run";
  ModelConfig model;

  double alpha = 0.1;
  double beta = 10.0;
  double ctc_weight = 0.1;  // λ_ctc at decoding time
  std::size_t beam = 4;
  std::size_t max_decode_len = 8;

  std::size_t batch_size = 8;
  std::size_t steps = 5000;
  double lr = 1e-3;
  double warmup_fraction = 0.05;
  std::uint64_t seed = 1;

  bool freeze_backbone = false;
  // Leading steps that optimize only prompts + classifier on the
  // classification term.
  std::size_t classifier_warmup_steps = 0;
  bool balance_enabled = true;

  std::optional<double> noise_snr_db;
  std::uint64_t noise_seed = 7;

  std::size_t log_interval = 50;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

DType parse_dtype(const std::string& s);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);
CorpusConfig load_corpus_config(const std::string& path);

}  // namespace polyavsr
