#include "uvlp/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "uvlp/autodiff.hpp"
#include "uvlp/rng.hpp"
#include "uvlp/training.hpp"
#include "uvlp/vocab.hpp"

namespace uvlp {

ModelConfig grad_check_config() {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.vocab_size = 16;
  c.max_positions = 16;
  c.regions = 4;
  c.text_len = 6;
  c.feature_dim = 8;
  c.num_classes = 4;
  c.num_answers = 4;
  c.vqa_hidden = 8;
  c.dropout = 0.0;
  return c;
}

std::vector<SceneExample> random_scenes(const ModelConfig& c, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t ordinary = c.vocab_size - special::kReservedCount;
  auto word = [&] { return static_cast<TokenId>(special::kReservedCount + rng.below(ordinary)); };
  std::vector<SceneExample> out;
  for (std::size_t n = 0; n < count; ++n) {
    SceneExample s;
    s.scene_id = n;
    for (std::size_t j = 0; j < c.regions; ++j) {
      Region r;
      for (std::size_t i = 0; i < c.feature_dim; ++i) r.features.push_back(2.0 * rng.uniform() - 1.0);
      double total = 0.0;
      for (std::size_t i = 0; i < c.num_classes; ++i) {
        r.class_probs.push_back(std::exp(2.0 * rng.normal()));
        total += r.class_probs.back();
      }
      for (double& p : r.class_probs) p /= total;
      const double x1 = 0.5 * rng.uniform();
      const double y1 = 0.5 * rng.uniform();
      const double x2 = x1 + 0.05 + 0.4 * rng.uniform();
      const double y2 = y1 + 0.05 + 0.4 * rng.uniform();
      r.geometry = {x1, y1, x2, y2, (x2 - x1) * (y2 - y1)};
      s.regions.push_back(std::move(r));
    }
    for (std::size_t i = 0, len = 1 + rng.below(c.text_len); i < len; ++i) s.caption.push_back(word());
    QaPair qa;
    for (std::size_t i = 0, len = 1 + rng.below(c.text_len); i < len; ++i) qa.question.push_back(word());
    qa.soft_label.assign(c.num_answers, 0.0);
    qa.soft_label[rng.below(c.num_answers)] = 1.0;
    s.qa.push_back(std::move(qa));
    out.push_back(std::move(s));
  }
  return out;
}

ModelWeights spread_weights(const ModelConfig& config, std::uint64_t seed, double scale) {
  ModelConfig c = config;
  c.init_std = scale;
  Rng rng(seed);
  ModelWeights w = init_weights(c, rng);
  for (auto& p : w.named()) {
    if (p.name.find("gain") != std::string::npos || p.name.find("bias") != std::string::npos) {
      for (double& v : p.tensor->values()) v += 0.3 * rng.normal();
    }
  }
  return w;
}

GradCheckReport full_model_grad_check(const ModelConfig& config, std::size_t batch, std::uint64_t seed, double scale,
                                      double h) {
  const auto start = std::chrono::steady_clock::now();
  TrainConfig tc;
  tc.model = config;
  tc.corruption.rate = 0.4;
  std::vector<std::string> words;
  for (std::size_t i = special::kReservedCount; i < config.vocab_size; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab(words);
  const std::vector<SceneExample> scenes = random_scenes(config, batch, seed);
  std::vector<const SceneExample*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  const std::vector<QaItem> items = qa_items(scenes);
  ModelWeights w = spread_weights(config, seed + 1, scale);

  auto loss = [&] {
    Rng corrupt(seed + 2);
    double total = masked_lm_loss(ptrs, Objective::kSeq2Seq, w, tc, vocab, corrupt).loss;
    total += masked_lm_loss(ptrs, Objective::kBidirectional, w, tc, vocab, corrupt).loss;
    return total + vqa_loss(items, w, tc).loss;
  };
  w.set_requires_grad(true);
  w.zero_grad();
  loss();
  // Probe evaluations must not add to the stored gradients.
  w.set_requires_grad(false);

  GradCheckReport report;
  for (auto& p : w.named()) {
    const double e = finite_diff_check(loss, *p.tensor, h);
    report.coordinates += p.tensor->size();
    if (e > report.max_error || report.worst_tensor.empty()) {
      report.max_error = std::max(report.max_error, e);
      report.worst_tensor = p.name;
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace uvlp
