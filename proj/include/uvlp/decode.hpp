#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "uvlp/config.hpp"
#include "uvlp/data.hpp"
#include "uvlp/vocab.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

/// Next-token logits (indexed by token id) after the given prefix.
using NextLogits = std::function<std::vector<double>(std::span<const TokenId> prefix)>;

struct Beam {
  std::vector<TokenId> tokens;  // ends with the stop token when finished
  double log_prob = 0.0;
  bool finished = false;
};

/// Candidate tokens and the terminator for a search.
struct SearchSpace {
  std::vector<TokenId> allowed;
  TokenId stop = special::kStop;
};

/// Ordinary words plus [STOP].
SearchSpace caption_space(std::size_t vocab_size);

/// Log-softmax of the logits restricted to `allowed`, in the same order.
std::vector<double> restricted_log_probs(const std::vector<double>& logits, std::span<const TokenId> allowed);

/// At most max_len words followed by the stop token; every step takes the
/// most likely allowed token (lowest id on ties). A hypothesis that spends
/// the whole word budget is closed with the stop token at its model
/// probability, so every result is finished.
Beam greedy_search(const NextLogits& next, const SearchSpace& space, std::size_t max_len);

/// Length-synchronized beam search. Each live beam proposes its `beam`
/// best continuations, the best `beam` of all proposals survive, and those
/// ending in the stop token are frozen. Finished beams are ranked by
/// log_prob / length^alpha. The word budget is the same as greedy_search.
Beam beam_search(const NextLogits& next, const SearchSpace& space, std::size_t beam, std::size_t max_len,
                 double alpha = 0.0);

struct ScoredAnswer {
  std::size_t index = 0;  // answer class
  TokenId word = special::kUnk;
  double score = 0.0;     // sigmoid output
};

struct Prediction {
  std::vector<TokenId> caption;  // words only
  double log_prob = 0.0;
  bool finished = false;
  std::vector<ScoredAnswer> answers;  // best first
};

/// Logits at the trailing [MASK] after `prefix` for one scene.
NextLogits caption_scorer(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config);

Prediction greedy_decode(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config,
                         std::size_t max_len);
Prediction beam_search(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config,
                       std::size_t beam, std::size_t max_len, double alpha = 0.0);

/// Sigmoid scores of every answer class, unsorted.
std::vector<double> vqa_scores(const SceneExample& scene, std::span<const TokenId> question,
                               const ModelWeights& weights, const ModelConfig& config);
Prediction vqa_predict(const SceneExample& scene, std::span<const TokenId> question, const ModelWeights& weights,
                       const ModelConfig& config, std::span<const TokenId> answers, std::size_t topk);

}  // namespace uvlp
