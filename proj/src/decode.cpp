#include "uvlp/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "uvlp/embeddings.hpp"
#include "uvlp/error.hpp"
#include "uvlp/transformer.hpp"

namespace uvlp {

SearchSpace caption_space(std::size_t vocab_size) {
  SearchSpace s;
  s.allowed.push_back(special::kStop);
  for (std::size_t id = special::kReservedCount; id < vocab_size; ++id) s.allowed.push_back(static_cast<TokenId>(id));
  std::sort(s.allowed.begin(), s.allowed.end());
  return s;
}

std::vector<double> restricted_log_probs(const std::vector<double>& logits, std::span<const TokenId> allowed) {
  if (allowed.empty()) throw ConfigError("search space is empty");
  double hi = -std::numeric_limits<double>::infinity();
  for (TokenId t : allowed) {
    if (t >= logits.size()) throw IndexError("token " + std::to_string(t) + " outside logits");
    hi = std::max(hi, logits[t]);
  }
  double z = 0.0;
  for (TokenId t : allowed) z += std::exp(logits[t] - hi);
  const double log_z = hi + std::log(z);
  std::vector<double> out(allowed.size());
  for (std::size_t i = 0; i < allowed.size(); ++i) out[i] = logits[allowed[i]] - log_z;
  return out;
}

namespace {

/// Indices of the k largest values, ties to the lower index.
std::vector<std::size_t> top_indices(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, v.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::size_t stop_index(const SearchSpace& space) {
  const auto it = std::find(space.allowed.begin(), space.allowed.end(), space.stop);
  if (it == space.allowed.end()) throw ConfigError("search space does not contain the stop token");
  return static_cast<std::size_t>(it - space.allowed.begin());
}

double normalized(const Beam& b, double alpha) {
  if (alpha == 0.0) return b.log_prob;
  return b.log_prob / std::pow(static_cast<double>(std::max<std::size_t>(b.tokens.size(), 1)), alpha);
}

}  // namespace

Beam greedy_search(const NextLogits& next, const SearchSpace& space, std::size_t max_len) {
  const std::size_t stop = stop_index(space);
  Beam out;
  for (std::size_t t = 0; t <= max_len; ++t) {
    const auto lp = restricted_log_probs(next(out.tokens), space.allowed);
    // Once the word budget is spent the only continuation is the stop token.
    const std::size_t best = t == max_len ? stop : top_indices(lp, 1)[0];
    out.tokens.push_back(space.allowed[best]);
    out.log_prob += lp[best];
    if (best == stop) {
      out.finished = true;
      break;
    }
  }
  return out;
}

Beam beam_search(const NextLogits& next, const SearchSpace& space, std::size_t beam, std::size_t max_len,
                 double alpha) {
  if (beam == 0) throw ConfigError("beam width must be at least 1");
  const std::size_t stop = stop_index(space);
  std::vector<Beam> live(1);
  std::vector<Beam> finished;
  for (std::size_t t = 0; t <= max_len && !live.empty(); ++t) {
    struct Candidate {
      std::size_t parent;
      std::size_t rank;  // position among the parent's proposals
      TokenId token;
      double lp;
      double total;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = restricted_log_probs(next(live[b].tokens), space.allowed);
      const auto top = t == max_len ? std::vector<std::size_t>{stop} : top_indices(lp, beam);
      for (std::size_t r = 0; r < top.size(); ++r) {
        cands.push_back({b, r, space.allowed[top[r]], lp[top[r]], live[b].log_prob + lp[top[r]]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.total != b.total) return a.total > b.total;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.rank < b.rank;
    });
    cands.resize(std::min(cands.size(), beam));
    std::vector<Beam> survivors;
    for (const Candidate& c : cands) {
      Beam nb = live[c.parent];
      nb.tokens.push_back(c.token);
      nb.log_prob = c.total;
      if (c.token == space.stop) {
        nb.finished = true;
        finished.push_back(std::move(nb));
      } else {
        survivors.push_back(std::move(nb));
      }
    }
    live = std::move(survivors);
    if (alpha == 0.0 && !finished.empty() && !live.empty()) {
      // Log-probabilities only fall as beams grow.
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.log_prob);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.log_prob);
      if (best_done >= best_live) live.clear();
    }
  }
  const std::vector<Beam>& pool = finished.empty() ? live : finished;
  if (pool.empty()) return Beam{};
  const Beam* best = &pool[0];
  for (const Beam& b : pool) {
    if (normalized(b, alpha) > normalized(*best, alpha)) best = &b;
  }
  return *best;
}

NextLogits caption_scorer(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config) {
  const SequenceLayout layout{config.regions, config.text_len};
  // Region embeddings do not depend on the prefix.
  RegionBatch regions = pack_regions(scene, config);
  return [&weights, &config, layout, regions = std::move(regions)](std::span<const TokenId> prefix) {
    if (prefix.size() >= layout.text_slots()) throw IndexError("caption prefix exceeds the text block");
    std::vector<TokenId> slots(layout.text_slots(), special::kPad);
    std::copy(prefix.begin(), prefix.end(), slots.begin());
    slots[prefix.size()] = special::kMask;
    Tape tape(false);
    BoundWeights w = bind(tape, weights);
    Var h0 = embed_sequence(w.embeddings, regions, slots, Objective::kSeq2Seq, config);
    const AttentionMask mask = build_seq2seq_mask(config.regions, config.text_len, pad_pattern(slots));
    const AttentionMask* masks[] = {&mask};
    Var h = encode(h0, masks, w.layers, config);
    const std::size_t col[] = {layout.text_begin() + prefix.size()};
    const Tensor logits = lm_logits(h, col, w.lm, w.embeddings.token, config.ln_eps).value();
    return std::vector<double>(logits.values().begin(), logits.values().end());
  };
}

namespace {

Prediction to_prediction(const Beam& b) {
  Prediction p;
  for (TokenId t : b.tokens) {
    if (!Vocab::is_reserved(t)) p.caption.push_back(t);
  }
  p.log_prob = b.log_prob;
  p.finished = b.finished;
  return p;
}

void check_budget(std::size_t max_len, const ModelConfig& config) {
  if (max_len > config.text_len) {
    throw ConfigError("max_len " + std::to_string(max_len) + " exceeds text_len " + std::to_string(config.text_len));
  }
}

}  // namespace

Prediction greedy_decode(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config,
                         std::size_t max_len) {
  check_budget(max_len, config);
  return to_prediction(greedy_search(caption_scorer(scene, weights, config), caption_space(config.vocab_size), max_len));
}

Prediction beam_search(const SceneExample& scene, const ModelWeights& weights, const ModelConfig& config,
                       std::size_t beam, std::size_t max_len, double alpha) {
  check_budget(max_len, config);
  return to_prediction(
      beam_search(caption_scorer(scene, weights, config), caption_space(config.vocab_size), beam, max_len, alpha));
}

std::vector<double> vqa_scores(const SceneExample& scene, std::span<const TokenId> question,
                               const ModelWeights& weights, const ModelConfig& config) {
  if (question.size() > config.text_len) throw ShapeError("question exceeds text_len");
  const auto slots = make_text_slots(question, config.text_len);
  Tape tape(false);
  BoundWeights w = bind(tape, weights);
  Var h0 = embed_sequence(w.embeddings, pack_regions(scene, config), slots, Objective::kBidirectional, config);
  const AttentionMask mask = build_bidirectional_mask(config.regions, config.text_len, pad_pattern(slots));
  const AttentionMask* masks[] = {&mask};
  Var h = encode(h0, masks, w.layers, config);
  const std::size_t offsets[] = {0};
  Var scores = ad::sigmoid(vqa_logits(h, offsets, config.regions + 1, w.vqa));
  return std::vector<double>(scores.value().values().begin(), scores.value().values().end());
}

Prediction vqa_predict(const SceneExample& scene, std::span<const TokenId> question, const ModelWeights& weights,
                       const ModelConfig& config, std::span<const TokenId> answers, std::size_t topk) {
  const auto scores = vqa_scores(scene, question, weights, config);
  if (!answers.empty() && answers.size() != scores.size()) {
    throw ShapeError("answer list has " + std::to_string(answers.size()) + " entries, head has " +
                     std::to_string(scores.size()));
  }
  Prediction p;
  for (std::size_t i : top_indices(scores, topk)) {
    p.answers.push_back({i, answers.empty() ? special::kUnk : answers[i], scores[i]});
  }
  return p;
}

}  // namespace uvlp
