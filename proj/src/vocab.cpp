#include "polyavsr/vocab.hpp"

#include <sstream>

namespace polyavsr {

Vocab::Vocab(std::size_t num_languages, const std::vector<std::string>& content_tokens)
    : num_languages_(num_languages) {
  tokens_ = {"<blank>", "<pad>", "<sos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < num_languages; ++i) tokens_.push_back("<lang:L" + std::to_string(i) + ">");
  for (const auto& t : content_tokens) tokens_.push_back(t);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::language_token(int lang) const {
  if (lang < 0 || static_cast<std::size_t>(lang) >= num_languages_)
    throw std::out_of_range("vocab: no language " + std::to_string(lang));
  return kFirstLanguage + lang;
}

bool Vocab::is_language_token(int id) const {
  return id >= kFirstLanguage && id < first_content();
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

TokenSeq Vocab::encode(const std::string& text) const {
  TokenSeq out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(id(w));
  return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

TokenSeq Vocab::strip_specials(std::span<const int> ids) const {
  TokenSeq out;
  for (int i : ids)
    if (!is_special(i)) out.push_back(i);
  return out;
}

}  // namespace polyavsr
