#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uvlp/autodiff.hpp"
#include "uvlp/config.hpp"
#include "uvlp/embeddings.hpp"
#include "uvlp/masking.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

class Rng;

struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;
  /// When set, receives every attention matrix (U x U) in the order
  /// layer, example, head.
  std::vector<Tensor>* attention = nullptr;
};

/// Multi-head masked self-attention over a batch stored side by side:
/// h is d x (sum of mask sizes), example i occupying the next masks[i]
/// columns. Attention never crosses example boundaries.
Var masked_self_attention(Var h, std::span<const AttentionMask* const> masks, const BoundLayer& layer,
                          std::size_t heads, std::vector<Tensor>* probe = nullptr);

/// H' = LN(H + Attn(H)); out = LN(H' + FFN(H')).
Var transformer_block(Var h, std::span<const AttentionMask* const> masks, const BoundLayer& layer,
                      const ModelConfig& config, const ForwardOptions& options = {});

Var encode(Var h0, std::span<const AttentionMask* const> masks, std::span<const BoundLayer> layers,
           const ModelConfig& config, const ForwardOptions& options = {});

/// LM head on the given columns of h: n x vocab logits.
Var lm_logits(Var h, std::span<const std::size_t> columns, const BoundLmHead& head, Var token_table, double ln_eps);

/// Sigmoid-MLP input: H[CLS] * H[SEP] per example, as k x B logits.
/// `offsets` gives the first column of each example.
Var vqa_logits(Var h, std::span<const std::size_t> offsets, std::size_t sep, const BoundVqaHead& head);

/// Region class logits (n x l) at the given columns.
Var pretext_logits(Var h, std::span<const std::size_t> columns, const BoundPretextHead& head);

// Tape-free entry points for inference and tests.

Tensor forward(const InputSequence& input, const AttentionMask& mask, const ModelWeights& weights,
               const ModelConfig& config, std::vector<Tensor>* attention = nullptr);

/// `positions` are column indices of h_final and must lie in the text block.
Tensor lm_logits(const Tensor& h_final, std::span<const std::size_t> positions, const ModelWeights& weights,
                 const ModelConfig& config);

}  // namespace uvlp
