#include "uvlp/vocab.hpp"

#include <cctype>
#include <sstream>

#include "uvlp/error.hpp"

namespace uvlp {

namespace {
const char* const kReservedNames[] = {"[CLS]", "[SEP]", "[STOP]", "[MASK]", "[PAD]", "[UNK]"};
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const char* name : kReservedNames) {
    index_.emplace(name, static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(name);
  }
  for (const std::string& w : words) {
    if (w.empty()) throw ConfigError("vocab: empty word");
    if (!index_.emplace(w, static_cast<TokenId>(tokens_.size())).second) {
      throw ConfigError("vocab: duplicate word '" + w + "'");
    }
    tokens_.push_back(w);
  }
}

TokenId Vocab::id(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw IndexError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> Vocab::words() const {
  return {tokens_.begin() + special::kReservedCount, tokens_.end()};
}

TokenizedText tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("tokenize: max_len must be at least 1");
  std::string lowered(text);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream in(lowered);
  TokenizedText out;
  std::string word;
  std::size_t seen = 0;
  while (in >> word) {
    ++seen;
    if (out.ids.size() < max_len) out.ids.push_back(vocab.id(word));
  }
  out.length = out.ids.size();
  out.empty = seen == 0;
  out.ids.resize(max_len, special::kPad);
  return out;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (Vocab::is_reserved(id)) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace uvlp
