#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "uvlp/vocab.hpp"

namespace uvlp {

class Rng;

enum class Objective : std::uint8_t { kSeq2Seq = 0, kBidirectional = 1 };

std::string_view objective_name(Objective objective);
Objective parse_objective(std::string_view name);

/// Column layout of one input sequence:
/// [CLS], r_1..r_N, [SEP], then T + 1 text slots. The text slots hold the
/// caption words, the [STOP] token right after the last word, and [PAD]
/// for the remainder, so a full-length caption puts [STOP] in the last
/// column.
struct SequenceLayout {
  std::size_t regions = 0;
  std::size_t text_len = 0;

  std::size_t size() const noexcept { return regions + text_len + 3; }
  std::size_t sep() const noexcept { return regions + 1; }
  std::size_t text_begin() const noexcept { return regions + 2; }
  std::size_t text_slots() const noexcept { return text_len + 1; }
  bool is_visual(std::size_t column) const noexcept { return column <= regions; }
  bool is_text(std::size_t column) const noexcept { return column >= text_begin() && column < size(); }
};

/// U x U allow matrix: row = query position, column = key position.
class AttentionMask {
 public:
  AttentionMask(std::size_t size, std::vector<std::uint8_t> allow);

  std::size_t size() const noexcept { return size_; }
  bool allowed(std::size_t row, std::size_t col) const { return allow_[row * size_ + col] != 0; }
  std::span<const std::uint8_t> data() const noexcept { return allow_; }
  std::size_t row_count(std::size_t row) const;

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t size_;
  std::vector<std::uint8_t> allow_;
};

/// `text_pad` flags the T + 1 text slots that hold [PAD]; empty means no
/// padding. Padded columns are never attended.
AttentionMask build_bidirectional_mask(std::size_t regions, std::size_t text_len,
                                       const std::vector<bool>& text_pad = {});
/// Visual rows and [SEP] see the visual block and [SEP]; text slot p sees
/// the visual block, [SEP] and text slots up to p. With
/// visual_sees_sep = false the visual rows see only the visual block.
AttentionMask build_seq2seq_mask(std::size_t regions, std::size_t text_len,
                                 const std::vector<bool>& text_pad = {}, bool visual_sees_sep = true);
AttentionMask build_mask(Objective objective, std::size_t regions, std::size_t text_len,
                         const std::vector<bool>& text_pad = {});

/// Memoizes masks per (objective, padding pattern) for fixed N and T.
class MaskCache {
 public:
  MaskCache(std::size_t regions, std::size_t text_len) : regions_(regions), text_len_(text_len) {}
  const AttentionMask& get(Objective objective, const std::vector<bool>& text_pad);

 private:
  std::size_t regions_;
  std::size_t text_len_;
  std::map<std::pair<Objective, std::vector<bool>>, std::unique_ptr<const AttentionMask>> cache_;
};

enum class Replacement : std::uint8_t { kMask, kRandom, kKeep };

struct CorruptionConfig {
  double rate = 0.15;
  double p_mask = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;
  /// Redraw the selection until at least one position is chosen.
  bool force_one = true;
};

struct CorruptionPlan {
  std::vector<std::size_t> positions;  // indices into the text slots
  std::vector<Replacement> replacement;
  std::vector<TokenId> original;
};

struct Corruption {
  std::vector<TokenId> ids;
  CorruptionPlan plan;
};

/// Masked-LM corruption over text slots. Every non-[PAD] slot is selected
/// independently with probability `rate`; each selection is replaced by
/// [MASK], a uniformly drawn ordinary word, or left as is.
///
/// Draw order: one uniform per maskable slot (repeated as a whole pass
/// while nothing is selected and force_one is set), then for each
/// selection in slot order one uniform for the branch and, for the random
/// branch, one bounded integer for the word.
Corruption corrupt_tokens(std::span<const TokenId> text, Rng& rng, const CorruptionConfig& config,
                          const Vocab& vocab);

/// Deterministic per-batch objective alternation: the accumulator starts
/// at lambda, each call adds lambda and emits seq2seq whenever it reaches 1.
class ObjectiveSchedule {
 public:
  explicit ObjectiveSchedule(double lambda);

  Objective next();
  double lambda() const noexcept { return lambda_; }
  double accumulator() const noexcept { return accumulator_; }

 private:
  double lambda_;
  double accumulator_;
};

inline Objective next_objective(ObjectiveSchedule& schedule) { return schedule.next(); }

}  // namespace uvlp
