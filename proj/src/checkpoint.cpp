#include "polyavsr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

#include "polyavsr/config.hpp"

namespace polyavsr {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'P', 'A', 'V', 'S', 'R', 'C', 'K', 'P'};

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_entry(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.numel(); ++i)
    put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t.at(i))));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const ModelConfig& model, const Vocab& vocab) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string header = json{{"format_version", kCheckpointFormatVersion},
                                  {"model", model},
                                  {"vocab", vocab.tokens()},
                                  {"num_languages", vocab.num_languages()}}
                                 .dump();
  os.write(kMagic.data(), 8);
  put_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(os, static_cast<std::uint32_t>(store.params().size() + store.buffers().size()));
  for (const auto& p : store.params()) put_entry(os, p.name, p.tensor);
  for (const auto& b : store.buffers()) put_entry(os, b.name, b.tensor);
  if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), 8);
  if (!is || magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint");

  std::string header(get_u32(is), '\0');
  is.read(header.data(), static_cast<std::streamsize>(header.size()));
  if (!is) throw CheckpointError("checkpoint header truncated");
  const json h = json::parse(header);
  if (h.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw CheckpointError("unsupported checkpoint version " + h.at("format_version").dump());

  Checkpoint ck;
  ck.model = h.at("model").get<ModelConfig>();
  const auto tokens = h.at("vocab").get<std::vector<std::string>>();
  const auto m = h.at("num_languages").get<std::size_t>();
  const auto first = static_cast<std::size_t>(Vocab::kFirstLanguage) + m;
  if (tokens.size() < first) throw CheckpointError("checkpoint vocabulary too short");
  ck.vocab = Vocab(m, std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(first), tokens.end()));

  const auto count = get_u32(is);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name(get_u32(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    CheckpointEntry entry;
    const auto rank = get_u32(is);
    for (std::uint32_t r = 0; r < rank; ++r) entry.shape.push_back(get_u32(is));
    entry.values.resize(shape_numel(entry.shape));
    for (auto& v : entry.values) v = std::bit_cast<float>(get_u32(is));
    ck.entries.emplace(std::move(name), std::move(entry));
  }
  return ck;
}

void restore_into(ParamStore& store, const Checkpoint& ckpt) {
  auto copy = [&](const NamedTensor& nt) {
    auto it = ckpt.entries.find(nt.name);
    if (it == ckpt.entries.end()) throw CheckpointError("checkpoint lacks '" + nt.name + "'");
    if (it->second.shape != nt.tensor.shape())
      throw CheckpointError("'" + nt.name + "' has shape " + shape_str(it->second.shape) +
                            ", model expects " + shape_str(nt.tensor.shape()));
    Tensor t = nt.tensor;
    for (std::size_t i = 0; i < it->second.values.size(); ++i) t.set(i, it->second.values[i]);
  };
  for (const auto& p : store.params()) copy(p);
  for (const auto& b : store.buffers()) copy(b);
}

void require_same_vocab(const Vocab& ckpt, const Vocab& corpus) {
  if (ckpt == corpus) return;
  throw CompatibilityError("checkpoint vocabulary (" + std::to_string(ckpt.size()) + " tokens, " +
                           std::to_string(ckpt.num_languages()) +
                           " languages) does not match the corpus (" +
                           std::to_string(corpus.size()) + " tokens, " +
                           std::to_string(corpus.num_languages()) + " languages)");
}

}  // namespace polyavsr
