#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uvlp/autodiff.hpp"
#include "uvlp/config.hpp"
#include "uvlp/data.hpp"
#include "uvlp/masking.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

/// Row of the segment table for an (objective, modality) pair.
inline std::size_t segment_row(Objective objective, bool text) {
  return 2 * static_cast<std::size_t>(objective) + (text ? 1 : 0);
}

/// r = W_r R + W_p [LN(W_c C) | LN(W_g G)]. With use_class = false the
/// class half of the concatenation is zero.
Tensor embed_region(const Region& region, const EmbeddingTables& tables, double ln_eps = 1e-12,
                    bool use_class = true);

/// Caption (or question) ids -> T + 1 text slots: words, [STOP], [PAD]...
/// Words past T are dropped.
std::vector<TokenId> make_text_slots(std::span<const TokenId> words, std::size_t text_len);
std::vector<bool> pad_pattern(std::span<const TokenId> slots);

struct InputSequence {
  Tensor h0;  // d x U
  std::size_t size = 0;
  std::size_t text_start = 0;  // column of [SEP]
  std::vector<TokenId> token_ids;  // the T + 1 text slots
  std::size_t region_count = 0;
  std::vector<bool> text_pad;
};

/// Region inputs packed column-wise for one example.
struct RegionBatch {
  Tensor features;     // d_in x N
  Tensor class_probs;  // l x N
  Tensor geometry;     // 5 x N
};

/// `zeroed` lists region indices whose appearance features are blanked.
RegionBatch pack_regions(const SceneExample& scene, const ModelConfig& config,
                         std::span<const std::size_t> zeroed = {});

/// Region embeddings d x N on a tape.
Var embed_regions(const BoundEmbeddings& tables, const RegionBatch& regions, const ModelConfig& config);

/// H0 (d x U) for one example on a tape. `slots` are the T + 1 text slots.
Var embed_sequence(const BoundEmbeddings& tables, const RegionBatch& regions, std::span<const TokenId> slots,
                   Objective objective, const ModelConfig& config);

/// Tape-free assembly from already tokenized slots (length T + 1).
InputSequence assemble_slots(const SceneExample& scene, std::span<const TokenId> slots, Objective objective,
                             const EmbeddingTables& tables, const ModelConfig& config);
/// `text_ids` has length T: words padded with [PAD]. [STOP] goes right
/// after the last word.
InputSequence assemble_input(const SceneExample& scene, std::span<const TokenId> text_ids, Objective objective,
                             const EmbeddingTables& tables, const ModelConfig& config);

}  // namespace uvlp
