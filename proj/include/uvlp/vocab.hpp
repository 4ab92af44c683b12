#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uvlp {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kStop = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kPad = 4;
inline constexpr TokenId kUnk = 5;
inline constexpr TokenId kReservedCount = 6;
}  // namespace special

/// Closed word vocabulary. Ids 0..5 are the reserved tokens in the order
/// [CLS], [SEP], [STOP], [MASK], [PAD], [UNK]; ordinary words follow.
class Vocab {
 public:
  Vocab();
  /// Ordinary words, without the reserved tokens. Duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& token(TokenId id) const;
  static bool is_reserved(TokenId id) noexcept { return id < special::kReservedCount; }

  /// Every token including the reserved ones, indexed by id.
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  /// Ordinary words only, as accepted by the constructor.
  std::vector<std::string> words() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenizedText {
  std::vector<TokenId> ids;  // exactly max_len entries, right-padded with [PAD]
  std::size_t length = 0;    // tokens kept before padding
  bool empty = false;        // input had no tokens at all
};

/// Lowercased whitespace tokenization, trimmed to max_len and right-padded.
TokenizedText tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len);

/// Joins ordinary tokens with single spaces; reserved tokens are skipped.
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

}  // namespace uvlp
