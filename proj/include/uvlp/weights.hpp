#pragma once

#include <optional>
#include <vector>

#include "uvlp/autodiff.hpp"
#include "uvlp/config.hpp"
#include "uvlp/optim.hpp"
#include "uvlp/tensor.hpp"

namespace uvlp {

class Rng;

/// Input-side tables: the region embedding projections, the word,
/// position and segment tables. Segment rows are indexed by
/// 2 * objective + (text ? 1 : 0).
struct EmbeddingTables {
  Tensor region_proj;     // W_r: d x d_in
  Tensor class_proj;      // W_c: d/2 x l
  Tensor geometry_proj;   // W_g: d/2 x 5
  Tensor branch_proj;     // W_p: d x d
  Tensor class_ln_gain, class_ln_bias;
  Tensor geometry_ln_gain, geometry_ln_bias;
  Tensor token;     // vocab x d; also the tied LM output projection
  Tensor position;  // max_positions x d
  Tensor segment;   // 4 x d
};

struct LayerWeights {
  Tensor query, key, value, output;  // d x d
  Tensor ffn_in, ffn_in_bias;        // ffn x d, ffn
  Tensor ffn_out, ffn_out_bias;      // d x ffn, d
  Tensor attn_ln_gain, attn_ln_bias;
  Tensor ffn_ln_gain, ffn_ln_bias;
};

struct LmHead {
  Tensor transform, transform_bias;  // d x d, d
  Tensor ln_gain, ln_bias;
  Tensor output_bias;  // vocab
};

/// Linear + ReLU + Linear (+ sigmoid at scoring time).
struct VqaHead {
  Tensor hidden, hidden_bias;  // h x d, h
  Tensor output, output_bias;  // k x h, k
};

struct RegionPretextHead {
  Tensor weight, bias;  // l x d, l
};

struct ModelWeights {
  EmbeddingTables embeddings;
  std::vector<LayerWeights> layers;
  LmHead lm;
  VqaHead vqa;
  std::optional<RegionPretextHead> pretext;

  /// Every tensor in canonical order with a stable dotted name.
  std::vector<NamedTensor> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  void set_requires_grad(bool on);
  void zero_grad();
};

ModelWeights init_weights(const ModelConfig& config, Rng& rng);
VqaHead init_vqa_head(const ModelConfig& config, Rng& rng);
/// Expected shape of every named tensor for a config.
std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& config);

struct BoundEmbeddings {
  Var region_proj, class_proj, geometry_proj, branch_proj;
  Var class_ln_gain, class_ln_bias, geometry_ln_gain, geometry_ln_bias;
  Var token, position, segment;
};

struct BoundLayer {
  Var query, key, value, output;
  Var ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
  Var attn_ln_gain, attn_ln_bias, ffn_ln_gain, ffn_ln_bias;
};

struct BoundLmHead {
  Var transform, transform_bias, ln_gain, ln_bias, output_bias;
};

struct BoundVqaHead {
  Var hidden, hidden_bias, output, output_bias;
};

struct BoundPretextHead {
  Var weight, bias;
};

/// Leaves for every weight on one tape.
struct BoundWeights {
  BoundEmbeddings embeddings;
  std::vector<BoundLayer> layers;
  BoundLmHead lm;
  BoundVqaHead vqa;
  std::optional<BoundPretextHead> pretext;
};

/// Trainable binding: gradients flow into the tensors.
BoundWeights bind(Tape& tape, ModelWeights& weights);
/// Read-only binding for inference.
BoundWeights bind(Tape& tape, const ModelWeights& weights);
BoundEmbeddings bind(Tape& tape, const EmbeddingTables& tables);
BoundLayer bind(Tape& tape, const LayerWeights& layer);

}  // namespace uvlp
