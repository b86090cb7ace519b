#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyavsr/vocab.hpp"

namespace polyavsr {

class DegenerateSignalError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusConfig {
  std::size_t num_languages = 3;
  std::size_t vocab_per_lang = 10;
  // Share of each language's tokens drawn from a pool common to all
  // languages (identical emission patterns). 0 gives disjoint vocabularies.
  double overlap_fraction = 0.0;
  std::size_t vocab_capacity = 40;
  std::size_t frames_per_token = 4;  // f
  std::size_t audio_downsample = 4;  // k_a
  std::size_t frame_height = 8;
  std::size_t frame_width = 8;
  std::size_t frame_channels = 1;
  double jitter_std = 0.05;
  std::size_t min_len = 2;
  std::size_t max_len = 5;
  std::size_t train_total = 600;
  std::vector<double> train_ratios;  // empty means uniform
  std::size_t valid_per_lang = 20;
  std::size_t test_per_lang = 60;
  std::uint64_t seed = 1;

  std::size_t audio_pattern_len() const { return audio_downsample * frames_per_token; }
  std::size_t frame_size() const { return frame_height * frame_width * frame_channels; }
};

struct LanguageSpec {
  int language = 0;
  std::vector<int> tokens;                       // vocab ids
  std::vector<double> start;                     // over `tokens`
  std::vector<std::vector<double>> transitions;  // rows/cols over `tokens`
  std::map<int, std::vector<float>> audio_patterns;  // k_a·f samples per token
  std::map<int, std::vector<float>> video_patterns;  // f frames of H×W×C per token
};

struct LanguageInventory {
  Vocab vocab;
  std::vector<LanguageSpec> specs;
};

// Seeded per-language token subsets, bigram tables and emission patterns.
// Throws CapacityError when specials + languages + content exceed
// vocab_capacity.
LanguageInventory build_language_specs(const CorpusConfig& cfg);

struct Utterance {
  std::string utt_id;
  int language = 0;
  TokenSeq tokens;
  std::vector<float> audio;  // S = k_a · L samples
  std::vector<float> video;  // L × H × W × C
  std::size_t frames = 0;    // L

  std::size_t samples() const { return audio.size(); }
};

Utterance sample_utterance(const LanguageSpec& spec, const CorpusConfig& cfg, std::mt19937_64& rng);

// Additive Gaussian noise at the requested SNR (dB). +infinity returns the
// input unchanged.
std::vector<float> inject_noise(std::span<const float> audio, double snr_db, std::mt19937_64& rng);

// Independent generator for (seed, key).
std::mt19937_64 derived_rng(std::uint64_t seed, const std::string& key);

// Largest-remainder apportionment of `total` over `ratios`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> ratios);

struct ManifestRecord {
  std::string utt_id;
  int language = 0;
  TokenSeq tokens;
  std::size_t frames = 0;
  std::size_t samples = 0;
  std::uint64_t audio_offset = 0;
  std::uint64_t video_offset = 0;
};

struct Split {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<double> ratios;
  std::vector<ManifestRecord> records;
  std::vector<Utterance> utterances;
};

struct Corpus {
  CorpusConfig config;
  Vocab vocab;
  std::map<std::string, Split> splits;

  const Split& split(const std::string& name) const;
};

// Builds train/valid/test in memory. Train counts follow cfg.train_ratios;
// valid and test are language-balanced.
Corpus make_splits(const LanguageInventory& inv, const CorpusConfig& cfg);

// corpus.json, <split>.jsonl, <split>.audio.bin, <split>.video.bin
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Per-language counts plus token/frame statistics for every split.
std::string inspect_corpus(const Corpus& corpus);

}  // namespace polyavsr
