#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyavsr/model_config.hpp"
#include "polyavsr/params.hpp"
#include "polyavsr/vocab.hpp"

namespace polyavsr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint vocabulary differs from the corpus it is used with.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig model;
  Vocab vocab;
  std::map<std::string, CheckpointEntry> entries;
};

// Layout: "PAVSRCKP", u32 header length, JSON header {format_version, model,
// vocab, num_languages}, u32 entry count, then per entry: u32 name length,
// name, u32 rank, u32 dims, float32 LE payload. All integers little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const ModelConfig& model, const Vocab& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter and buffer of `store` from the checkpoint. Missing
// names or shape mismatches throw CheckpointError.
void restore_into(ParamStore& store, const Checkpoint& ckpt);

void require_same_vocab(const Vocab& ckpt, const Vocab& corpus);

}  // namespace polyavsr
