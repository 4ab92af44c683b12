#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uvlp/checkpoint.hpp"
#include "uvlp/config.hpp"
#include "uvlp/data.hpp"
#include "uvlp/masking.hpp"
#include "uvlp/vocab.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

class Rng;

/// The losses the trainer can optimize. There is deliberately no
/// image-text matching term.
const std::vector<std::string>& loss_registry();

struct LossValue {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;  // predictions behind the accuracy
};

/// Independent random streams of one run.
struct RunStreams {
  explicit RunStreams(std::uint64_t seed);
  Rng& init();
  Rng& order();
  Rng& corruption();
  Rng& dropout();

 private:
  std::vector<Rng> streams_;
};

/// Corrupts each caption, encodes under `objective` and averages the
/// cross-entropy over every masked position of the batch. When `weights`
/// carries requires_grad tensors the gradient is accumulated into them.
/// `dropout_rng` enables dropout at config.model.dropout.
LossValue masked_lm_loss(std::span<const SceneExample* const> batch, Objective objective, ModelWeights& weights,
                         const TrainConfig& config, const Vocab& vocab, Rng& rng, Rng* dropout_rng = nullptr);

/// Blanks the appearance features of a random subset of regions (at least
/// one per example) and classifies them against argmax C_i. Requires the
/// pretext head; accuracy counts every selected region.
LossValue region_pretext_loss(std::span<const SceneExample* const> batch, ModelWeights& weights,
                              const TrainConfig& config, Rng& rng, Rng* dropout_rng = nullptr);

struct QaItem {
  const SceneExample* scene = nullptr;
  std::size_t qa = 0;
};
std::vector<QaItem> qa_items(const std::vector<SceneExample>& examples);

/// Mean binary cross-entropy of the VQA head against the soft labels.
/// Accuracy is the mean soft-label value at the top-scoring answer.
LossValue vqa_loss(std::span<const QaItem> batch, ModelWeights& weights, const TrainConfig& config,
                   Rng* dropout_rng = nullptr);

struct TrainRecord {
  std::size_t step = 0;
  Objective objective = Objective::kSeq2Seq;
  double loss = 0.0;
  double accuracy = 0.0;
  double wallclock_ms = 0.0;
};

class TrainLog {
 public:
  /// Steps must be strictly increasing.
  void append(const TrainRecord& record);
  const std::vector<TrainRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t count(Objective objective) const;

  /// The wall-clock column is written as 0 when include_wallclock is false
  /// so logs of identical runs compare byte for byte.
  std::string to_csv(bool include_wallclock = true) const;
  static TrainLog from_csv(const std::string& text);
  void write(const std::filesystem::path& path, bool include_wallclock = true) const;

 private:
  std::vector<TrainRecord> records_;
};

struct TrainHooks {
  /// Called every `eval_every` steps after the update, and after the last
  /// step. Returning true stops training early.
  std::function<bool(std::size_t step, const ModelWeights& weights)> evaluate;
  std::size_t eval_every = 0;
  /// Written periodically (config.checkpoint_every) and at the end.
  std::optional<std::filesystem::path> checkpoint_path;
  std::vector<TokenId> answers;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Alternates seq2seq and bidirectional masked-LM batches by config.lambda.
/// Adds the region pretext loss when the pretext head is configured.
TrainResult pretrain(const std::vector<SceneExample>& dataset, const TrainConfig& config, const Vocab& vocab,
                     const TrainHooks& hooks = {});

/// Seq2seq-only masked-LM training from `init` (all weights) or fresh.
TrainResult finetune_caption(const std::vector<SceneExample>& dataset, const Checkpoint* init,
                             const TrainConfig& config, const Vocab& vocab, const TrainHooks& hooks = {});

/// VQA head training with the bidirectional mask. The trunk comes from
/// `init` when given; the head is always freshly initialized.
TrainResult finetune_vqa(const std::vector<SceneExample>& dataset, const Checkpoint* init, const TrainConfig& config,
                         const Vocab& vocab, const TrainHooks& hooks = {});

/// Accuracy of masked-token prediction on held-out scenes with a fixed
/// corruption seed and no dropout.
LossValue evaluate_masked_lm(const std::vector<SceneExample>& dataset, Objective objective,
                             const ModelWeights& weights, const TrainConfig& config, const Vocab& vocab,
                             std::uint64_t seed);
LossValue evaluate_vqa(const std::vector<SceneExample>& dataset, const ModelWeights& weights,
                       const TrainConfig& config);

}  // namespace uvlp
