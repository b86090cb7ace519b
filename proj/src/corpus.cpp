#include "polyavsr/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "polyavsr/config.hpp"

namespace polyavsr {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kAudioMagic{'P', 'A', 'V', 'S', 'R', 'A', 'U', 'D'};
constexpr std::array<char, 8> kVideoMagic{'P', 'A', 'V', 'S', 'R', 'V', 'I', 'D'};
constexpr std::uint8_t kBlobVersion = 1;
constexpr int kCorpusFormatVersion = 1;

std::string pad_index(std::size_t i) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

std::vector<float> gaussian_pattern(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<float> p(n);
  for (auto& v : p) v = static_cast<float>(dist(rng));
  return p;
}

std::size_t draw(std::span<const double> probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (x < acc) return i;
  }
  return probs.size() - 1;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw CorpusFormatError("truncated payload header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32s(std::ostream& os, std::span<const float> values) {
  for (float f : values) put_u32(os, std::bit_cast<std::uint32_t>(f));
}

// Writes rank, dims and the payload; returns the record's byte offset.
std::uint64_t put_record(std::ostream& os, const std::vector<std::uint32_t>& dims,
                         std::span<const float> values) {
  const auto off = static_cast<std::uint64_t>(os.tellp());
  put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(os, d);
  put_f32s(os, values);
  return off;
}

std::vector<float> get_record(std::istream& is, std::uint64_t offset,
                              std::vector<std::uint32_t>& dims) {
  is.seekg(static_cast<std::streamoff>(offset));
  const auto rank = get_u32(is);
  if (rank == 0 || rank > 8) throw CorpusFormatError("bad record rank " + std::to_string(rank));
  dims.resize(rank);
  std::size_t n = 1;
  for (auto& d : dims) {
    d = get_u32(is);
    n *= d;
    if (n > (std::size_t{1} << 28)) throw CorpusFormatError("record too large");
  }
  std::vector<float> out(n);
  for (auto& v : out) v = std::bit_cast<float>(get_u32(is));
  return out;
}

void write_blob_header(std::ostream& os, const std::array<char, 8>& magic) {
  os.write(magic.data(), 8);
  os.put(static_cast<char>(kBlobVersion));
}

void check_blob_header(std::istream& is, const std::array<char, 8>& magic,
                       const std::string& what) {
  std::array<char, 8> m{};
  is.read(m.data(), 8);
  const int version = is.get();
  if (!is || m != magic) throw CorpusFormatError(what + ": bad magic");
  if (version != kBlobVersion)
    throw CorpusFormatError(what + ": unsupported version " + std::to_string(version));
}

}  // namespace

std::mt19937_64 derived_rng(std::uint64_t seed, const std::string& key) {
  std::vector<std::uint32_t> material{static_cast<std::uint32_t>(seed & 0xffffffffu),
                                      static_cast<std::uint32_t>(seed >> 32)};
  for (unsigned char c : key) material.push_back(c);
  std::seed_seq seq(material.begin(), material.end());
  return std::mt19937_64(seq);
}

LanguageInventory build_language_specs(const CorpusConfig& cfg) {
  const std::size_t m = cfg.num_languages, per = cfg.vocab_per_lang;
  if (m < 2) throw std::invalid_argument("corpus: at least two languages are required");
  if (per < 1) throw std::invalid_argument("corpus: vocab_per_lang must be positive");
  if (!(cfg.overlap_fraction >= 0.0 && cfg.overlap_fraction <= 1.0))
    throw std::invalid_argument("corpus: overlap_fraction must lie in [0, 1]");
  const auto shared = static_cast<std::size_t>(std::lround(cfg.overlap_fraction * static_cast<double>(per)));
  const std::size_t own = per - shared;
  const std::size_t content = shared + m * own;
  const std::size_t needed = static_cast<std::size_t>(Vocab::kFirstLanguage) + m + content;
  if (needed > cfg.vocab_capacity)
    throw CapacityError("corpus: " + std::to_string(needed) + " tokens exceed vocab capacity " +
                        std::to_string(cfg.vocab_capacity));

  std::vector<std::string> names;
  for (std::size_t i = 0; i < shared; ++i) names.push_back("s" + std::to_string(i));
  for (std::size_t l = 0; l < m; ++l)
    for (std::size_t i = 0; i < own; ++i)
      names.push_back("l" + std::to_string(l) + "w" + std::to_string(i));

  LanguageInventory inv;
  inv.vocab = Vocab(m, names);
  const int first = inv.vocab.first_content();

  // Emission patterns are keyed by token, so shared tokens look alike in
  // every language.
  std::map<int, std::vector<float>> audio, video;
  for (std::size_t i = 0; i < content; ++i) {
    const int id = first + static_cast<int>(i);
    auto rng = derived_rng(cfg.seed, "pattern/" + std::to_string(id));
    audio[id] = gaussian_pattern(cfg.audio_pattern_len(), rng);
    video[id] = gaussian_pattern(cfg.frames_per_token * cfg.frame_size(), rng);
  }

  for (std::size_t l = 0; l < m; ++l) {
    LanguageSpec spec;
    spec.language = static_cast<int>(l);
    for (std::size_t i = 0; i < shared; ++i) spec.tokens.push_back(first + static_cast<int>(i));
    for (std::size_t i = 0; i < own; ++i)
      spec.tokens.push_back(first + static_cast<int>(shared + l * own + i));
    const std::size_t k = spec.tokens.size();
    spec.start.assign(k, 1.0 / static_cast<double>(k));
    auto rng = derived_rng(cfg.seed, "bigram/" + std::to_string(l));
    std::gamma_distribution<double> gamma(0.5, 1.0);
    for (std::size_t r = 0; r < k; ++r) {
      std::vector<double> row(k);
      double s = 0;
      for (auto& v : row) {
        v = gamma(rng) + 1e-3;
        s += v;
      }
      for (auto& v : row) v /= s;
      spec.transitions.push_back(std::move(row));
    }
    for (int id : spec.tokens) {
      spec.audio_patterns[id] = audio[id];
      spec.video_patterns[id] = video[id];
    }
    inv.specs.push_back(std::move(spec));
  }
  return inv;
}

Utterance sample_utterance(const LanguageSpec& spec, const CorpusConfig& cfg,
                           std::mt19937_64& rng) {
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len)
    throw std::invalid_argument("sample_utterance: length range must satisfy 1 <= min <= max");
  std::uniform_int_distribution<std::size_t> len_dist(cfg.min_len, cfg.max_len);
  const std::size_t count = len_dist(rng);

  Utterance u;
  u.language = spec.language;
  std::size_t idx = draw(spec.start, rng);
  for (std::size_t i = 0; i < count; ++i) {
    if (i > 0) idx = draw(spec.transitions[idx], rng);
    u.tokens.push_back(spec.tokens[idx]);
  }

  std::normal_distribution<double> jitter(0.0, cfg.jitter_std);
  u.frames = cfg.frames_per_token * count;
  u.audio.reserve(cfg.audio_pattern_len() * count);
  u.video.reserve(cfg.frames_per_token * cfg.frame_size() * count);
  for (int tok : u.tokens) {
    for (float v : spec.audio_patterns.at(tok))
      u.audio.push_back(static_cast<float>(v + (cfg.jitter_std > 0 ? jitter(rng) : 0.0)));
    for (float v : spec.video_patterns.at(tok))
      u.video.push_back(static_cast<float>(v + (cfg.jitter_std > 0 ? jitter(rng) : 0.0)));
  }
  return u;
}

std::vector<float> inject_noise(std::span<const float> audio, double snr_db,
                                std::mt19937_64& rng) {
  std::vector<float> out(audio.begin(), audio.end());
  if (std::isinf(snr_db) && snr_db > 0) return out;
  double power = 0;
  for (float v : audio) power += static_cast<double>(v) * v;
  power /= static_cast<double>(std::max<std::size_t>(audio.size(), 1));
  if (!(power > 0.0))
    throw DegenerateSignalError("inject_noise: zero-power signal cannot be set to a finite SNR");
  const double noise_std = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> dist(0.0, noise_std);
  for (auto& v : out) v = static_cast<float>(v + dist(rng));
  return out;
}

std::vector<std::size_t> apportion(std::size_t total, std::span<const double> ratios) {
  if (ratios.empty()) throw ConfigError("apportion: no ratios");
  const double s = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("ratios must sum to 1 (got " + std::to_string(s) + ")");
  std::vector<std::size_t> counts(ratios.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] < 0) throw ConfigError("ratios must be non-negative");
    const double exact = ratios[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    rem.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
  return counts;
}

const Split& Corpus::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw std::out_of_range("corpus has no split '" + name + "'");
  return it->second;
}

Corpus make_splits(const LanguageInventory& inv, const CorpusConfig& cfg) {
  const std::size_t m = inv.specs.size();
  std::vector<double> ratios = cfg.train_ratios;
  if (ratios.empty()) ratios.assign(m, 1.0 / static_cast<double>(m));
  if (ratios.size() != m)
    throw ConfigError("train_ratios has " + std::to_string(ratios.size()) + " entries for " +
                      std::to_string(m) + " languages");

  Corpus corpus;
  corpus.config = cfg;
  corpus.config.train_ratios = ratios;
  corpus.vocab = inv.vocab;

  const std::vector<std::pair<std::string, std::vector<std::size_t>>> plan{
      {"train", apportion(cfg.train_total, ratios)},
      {"valid", std::vector<std::size_t>(m, cfg.valid_per_lang)},
      {"test", std::vector<std::size_t>(m, cfg.test_per_lang)}};

  for (std::size_t si = 0; si < plan.size(); ++si) {
    const auto& [name, counts] = plan[si];
    Split split;
    split.name = name;
    split.seed = derived_rng(cfg.seed, "split/" + name)();
    split.ratios = name == "train" ? ratios : std::vector<double>(m, 1.0 / static_cast<double>(m));
    for (std::size_t l = 0; l < m; ++l)
      for (std::size_t i = 0; i < counts[l]; ++i) {
        const std::string id = name + "-L" + std::to_string(l) + "-" + pad_index(i);
        auto rng = derived_rng(split.seed, id);
        Utterance u = sample_utterance(inv.specs[l], cfg, rng);
        u.utt_id = id;
        split.records.push_back({id, u.language, u.tokens, u.frames, u.samples(), 0, 0});
        split.utterances.push_back(std::move(u));
      }
    corpus.splits.emplace(name, std::move(split));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& cfg = corpus.config;
  json meta{{"format_version", kCorpusFormatVersion},
            {"config", cfg},
            {"vocab", corpus.vocab.tokens()},
            {"num_languages", corpus.vocab.num_languages()}};
  json split_names = json::array();
  for (const auto& [name, _] : corpus.splits) split_names.push_back(name);
  meta["splits"] = split_names;
  std::ofstream(dir / "corpus.json") << meta.dump(2) << '\n';

  for (const auto& [name, split] : corpus.splits) {
    std::ofstream audio(dir / (name + ".audio.bin"), std::ios::binary);
    std::ofstream video(dir / (name + ".video.bin"), std::ios::binary);
    std::ofstream manifest(dir / (name + ".jsonl"));
    if (!audio || !video || !manifest)
      throw CorpusFormatError("cannot write split '" + name + "' under " + dir.string());
    write_blob_header(audio, kAudioMagic);
    write_blob_header(video, kVideoMagic);
    manifest << json{{"type", "header"},
                     {"split", name},
                     {"seed", split.seed},
                     {"ratios", split.ratios},
                     {"count", split.utterances.size()}}
                    .dump()
             << '\n';
    for (const auto& u : split.utterances) {
      const auto a_off =
          put_record(audio, {static_cast<std::uint32_t>(u.samples())}, u.audio);
      const auto v_off = put_record(
          video,
          {static_cast<std::uint32_t>(u.frames), static_cast<std::uint32_t>(cfg.frame_height),
           static_cast<std::uint32_t>(cfg.frame_width),
           static_cast<std::uint32_t>(cfg.frame_channels)},
          u.video);
      manifest << json{{"type", "utt"},
                       {"utt_id", u.utt_id},
                       {"lang", u.language},
                       {"tokens", u.tokens},
                       {"text", corpus.vocab.decode(u.tokens)},
                       {"frames", u.frames},
                       {"samples", u.samples()},
                       {"audio_offset", a_off},
                       {"video_offset", v_off}}
                      .dump()
               << '\n';
    }
  }
}

namespace {

Corpus load_corpus_unchecked(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "corpus.json");
  if (!meta_in) throw CorpusFormatError("no corpus.json under " + dir.string());
  const json meta = json::parse(meta_in);
  if (meta.at("format_version").get<int>() != kCorpusFormatVersion)
    throw CorpusFormatError("unsupported corpus format version");

  Corpus corpus;
  corpus.config = meta.at("config").get<CorpusConfig>();
  const auto tokens = meta.at("vocab").get<std::vector<std::string>>();
  const auto m = meta.at("num_languages").get<std::size_t>();
  const std::size_t first = static_cast<std::size_t>(Vocab::kFirstLanguage) + m;
  if (tokens.size() < first) throw CorpusFormatError("vocabulary too short");
  corpus.vocab = Vocab(m, std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(first), tokens.end()));
  if (corpus.vocab.tokens() != tokens) throw CorpusFormatError("vocabulary layout mismatch");

  for (const auto& name : meta.at("splits").get<std::vector<std::string>>()) {
    std::ifstream manifest(dir / (name + ".jsonl"));
    std::ifstream audio(dir / (name + ".audio.bin"), std::ios::binary);
    std::ifstream video(dir / (name + ".video.bin"), std::ios::binary);
    if (!manifest || !audio || !video) throw CorpusFormatError("split '" + name + "' is incomplete");
    check_blob_header(audio, kAudioMagic, name + ".audio.bin");
    check_blob_header(video, kVideoMagic, name + ".video.bin");

    Split split;
    split.name = name;
    std::string line;
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (j.at("type") == "header") {
        split.seed = j.at("seed").get<std::uint64_t>();
        split.ratios = j.at("ratios").get<std::vector<double>>();
        continue;
      }
      ManifestRecord r;
      r.utt_id = j.at("utt_id").get<std::string>();
      r.language = j.at("lang").get<int>();
      r.tokens = j.at("tokens").get<TokenSeq>();
      r.frames = j.at("frames").get<std::size_t>();
      r.samples = j.at("samples").get<std::size_t>();
      r.audio_offset = j.at("audio_offset").get<std::uint64_t>();
      r.video_offset = j.at("video_offset").get<std::uint64_t>();

      Utterance u;
      u.utt_id = r.utt_id;
      u.language = r.language;
      u.tokens = r.tokens;
      u.frames = r.frames;
      std::vector<std::uint32_t> dims;
      u.audio = get_record(audio, r.audio_offset, dims);
      if (dims.size() != 1 || dims[0] != r.samples)
        throw CorpusFormatError(r.utt_id + ": audio shape disagrees with manifest");
      u.video = get_record(video, r.video_offset, dims);
      if (dims.size() != 4 || dims[0] != r.frames || dims[1] != corpus.config.frame_height ||
          dims[2] != corpus.config.frame_width || dims[3] != corpus.config.frame_channels)
        throw CorpusFormatError(r.utt_id + ": video shape disagrees with manifest");
      split.records.push_back(std::move(r));
      split.utterances.push_back(std::move(u));
    }
    corpus.splits.emplace(name, std::move(split));
  }
  return corpus;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  try {
    return load_corpus_unchecked(dir);
  } catch (const json::exception& e) {
    throw CorpusFormatError("malformed corpus metadata under " + dir.string() + ": " + e.what());
  }
}

std::string inspect_corpus(const Corpus& corpus) {
  std::ostringstream os;
  const std::size_t m = corpus.vocab.num_languages();
  os << "languages: " << m << "  vocab: " << corpus.vocab.size()
     << "  frames/token: " << corpus.config.frames_per_token << '\n';
  for (const auto& [name, split] : corpus.splits) {
    os << "\n[" << name << "] " << split.utterances.size() << " utterances\n";
    os << std::left << std::setw(6) << "lang" << std::right << std::setw(8) << "count"
       << std::setw(8) << "share" << std::setw(10) << "tok_mean" << std::setw(8) << "tok_min"
       << std::setw(8) << "tok_max" << std::setw(11) << "frames_sum" << std::setw(12)
       << "frames_mean" << '\n';
    for (std::size_t l = 0; l < m; ++l) {
      std::size_t count = 0, tok_sum = 0, frame_sum = 0;
      std::size_t tmin = std::numeric_limits<std::size_t>::max(), tmax = 0;
      for (const auto& u : split.utterances) {
        if (u.language != static_cast<int>(l)) continue;
        ++count;
        tok_sum += u.tokens.size();
        frame_sum += u.frames;
        tmin = std::min(tmin, u.tokens.size());
        tmax = std::max(tmax, u.tokens.size());
      }
      const double share = split.utterances.empty()
                               ? 0.0
                               : static_cast<double>(count) / static_cast<double>(split.utterances.size());
      os << std::left << std::setw(6) << ("L" + std::to_string(l)) << std::right << std::setw(8)
         << count << std::setw(8) << std::fixed << std::setprecision(3) << share << std::setw(10)
         << std::setprecision(2) << (count ? static_cast<double>(tok_sum) / static_cast<double>(count) : 0.0)
         << std::setw(8) << (count ? tmin : 0) << std::setw(8) << tmax << std::setw(11) << frame_sum
         << std::setw(12)
         << (count ? static_cast<double>(frame_sum) / static_cast<double>(count) : 0.0) << '\n';
    }
  }
  return os.str();
}

}  // namespace polyavsr
