#include "uvlp/masking.hpp"

#include <string>

#include "uvlp/error.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

std::string_view objective_name(Objective objective) {
  return objective == Objective::kSeq2Seq ? "seq2seq" : "bidirectional";
}

Objective parse_objective(std::string_view name) {
  if (name == "seq2seq") return Objective::kSeq2Seq;
  if (name == "bidirectional") return Objective::kBidirectional;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

AttentionMask::AttentionMask(std::size_t size, std::vector<std::uint8_t> allow)
    : size_(size), allow_(std::move(allow)) {
  if (allow_.size() != size_ * size_) throw ShapeError("attention mask needs " + std::to_string(size_ * size_) + " entries");
  for (std::size_t r = 0; r < size_; ++r) {
    if (row_count(r) == 0) throw InvalidMaskError("attention mask row " + std::to_string(r) + " allows nothing");
  }
}

std::size_t AttentionMask::row_count(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < size_; ++c) n += allow_[row * size_ + c] != 0;
  return n;
}

namespace {

std::vector<bool> padded_columns(const SequenceLayout& layout, const std::vector<bool>& text_pad) {
  std::vector<bool> pad(layout.size(), false);
  if (text_pad.empty()) return pad;
  if (text_pad.size() != layout.text_slots()) {
    throw ShapeError("padding pattern has " + std::to_string(text_pad.size()) + " entries, expected " +
                     std::to_string(layout.text_slots()));
  }
  for (std::size_t i = 0; i < text_pad.size(); ++i) pad[layout.text_begin() + i] = text_pad[i];
  return pad;
}

}  // namespace

AttentionMask build_bidirectional_mask(std::size_t regions, std::size_t text_len, const std::vector<bool>& text_pad) {
  if (regions < 1 || text_len < 1) throw ConfigError("masks need N, T >= 1");
  const SequenceLayout layout{regions, text_len};
  const std::size_t u = layout.size();
  const auto pad = padded_columns(layout, text_pad);
  std::vector<std::uint8_t> allow(u * u);
  for (std::size_t r = 0; r < u; ++r) {
    for (std::size_t c = 0; c < u; ++c) allow[r * u + c] = !pad[c];
  }
  return AttentionMask(u, std::move(allow));
}

AttentionMask build_seq2seq_mask(std::size_t regions, std::size_t text_len, const std::vector<bool>& text_pad,
                                 bool visual_sees_sep) {
  if (regions < 1 || text_len < 1) throw ConfigError("masks need N, T >= 1");
  const SequenceLayout layout{regions, text_len};
  const std::size_t u = layout.size();
  const auto pad = padded_columns(layout, text_pad);
  std::vector<std::uint8_t> allow(u * u, 0);
  for (std::size_t r = 0; r < u; ++r) {
    const bool visual_row = layout.is_visual(r);
    for (std::size_t c = 0; c < u; ++c) {
      bool ok;
      if (layout.is_visual(c)) ok = true;
      else if (c == layout.sep()) ok = !visual_row || visual_sees_sep;
      else ok = layout.is_text(r) && c <= r;
      allow[r * u + c] = ok && !pad[c];
    }
  }
  return AttentionMask(u, std::move(allow));
}

AttentionMask build_mask(Objective objective, std::size_t regions, std::size_t text_len,
                         const std::vector<bool>& text_pad) {
  return objective == Objective::kSeq2Seq ? build_seq2seq_mask(regions, text_len, text_pad)
                                          : build_bidirectional_mask(regions, text_len, text_pad);
}

const AttentionMask& MaskCache::get(Objective objective, const std::vector<bool>& text_pad) {
  auto key = std::make_pair(objective, text_pad);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(std::move(key), std::make_unique<const AttentionMask>(
                                            build_mask(objective, regions_, text_len_, text_pad)))
             .first;
  }
  return *it->second;
}

Corruption corrupt_tokens(std::span<const TokenId> text, Rng& rng, const CorruptionConfig& config,
                          const Vocab& vocab) {
  if (!(config.rate > 0.0 && config.rate <= 1.0)) throw ConfigError("corruption rate must lie in (0, 1]");
  const double total = config.p_mask + config.p_random + config.p_keep;
  if (config.p_mask < 0 || config.p_random < 0 || config.p_keep < 0 || std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("corruption branch probabilities must be nonnegative and sum to 1");
  }
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != special::kPad) maskable.push_back(i);
  }
  if (maskable.empty()) throw ConfigError("corrupt_tokens: text has no maskable position");
  const std::uint64_t ordinary = vocab.size() - special::kReservedCount;
  if (config.p_random > 0.0 && ordinary == 0) throw ConfigError("corrupt_tokens: vocabulary has no ordinary words");

  Corruption out;
  out.ids.assign(text.begin(), text.end());
  std::vector<std::size_t> selected;
  do {
    selected.clear();
    for (std::size_t i : maskable) {
      if (rng.uniform() < config.rate) selected.push_back(i);
    }
  } while (selected.empty() && config.force_one);

  for (std::size_t i : selected) {
    const double branch = rng.uniform();
    Replacement how;
    if (branch < config.p_mask) {
      how = Replacement::kMask;
      out.ids[i] = special::kMask;
    } else if (branch < config.p_mask + config.p_random) {
      how = Replacement::kRandom;
      out.ids[i] = static_cast<TokenId>(special::kReservedCount + rng.below(ordinary));
    } else {
      how = Replacement::kKeep;
    }
    out.plan.positions.push_back(i);
    out.plan.replacement.push_back(how);
    out.plan.original.push_back(text[i]);
  }
  return out;
}

ObjectiveSchedule::ObjectiveSchedule(double lambda) : lambda_(lambda), accumulator_(lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

Objective ObjectiveSchedule::next() {
  accumulator_ += lambda_;
  if (accumulator_ >= 1.0) {
    accumulator_ -= 1.0;
    return Objective::kSeq2Seq;
  }
  return Objective::kBidirectional;
}

}  // namespace uvlp
