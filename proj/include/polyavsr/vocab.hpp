#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace polyavsr {

using TokenSeq = std::vector<int>;

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Token inventory shared by the CTC head and the decoder.
// Ids: 0 blank, 1 pad, 2 sos, 3 eos, 4 unk, then one token per language,
// then content tokens.
class Vocab {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kPad = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kUnk = 4;
  static constexpr int kFirstLanguage = 5;

  Vocab() = default;
  Vocab(std::size_t num_languages, const std::vector<std::string>& content_tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_languages() const { return num_languages_; }
  int language_token(int lang) const;
  bool is_language_token(int id) const;
  bool is_special(int id) const { return id < first_content(); }
  int first_content() const { return kFirstLanguage + static_cast<int>(num_languages_); }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int id(const std::string& token) const;  // unknown strings map to <unk>
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;
  TokenSeq strip_specials(std::span<const int> ids) const;

  bool operator==(const Vocab& o) const {
    return tokens_ == o.tokens_ && num_languages_ == o.num_languages_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t num_languages_ = 0;
};

}  // namespace polyavsr
