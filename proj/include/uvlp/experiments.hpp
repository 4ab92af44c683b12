#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uvlp/config.hpp"
#include "uvlp/data.hpp"
#include "uvlp/training.hpp"

namespace uvlp {

/// Scene splits drawn from disjoint id ranges of one generator, so no
/// fine-tuning or validation scene is ever seen during pre-training.
struct Splits {
  std::vector<SceneExample> pretrain;
  std::vector<SceneExample> finetune;
  std::vector<SceneExample> val;
  AnswerVocab answers;  // built on the fine-tuning split
};

struct SplitSizes {
  std::size_t pretrain = 2000;
  std::size_t finetune = 400;
  std::size_t val = 200;
  double noise = 0.1;
};

inline constexpr std::uint64_t kFinetuneFirstId = 1'000'000;
inline constexpr std::uint64_t kValFirstId = 2'000'000;

Splits make_splits(const SceneGenerator& generator, std::uint64_t seed, std::size_t regions, const SplitSizes& sizes,
                   std::size_t answers = 32);

struct CurvePoint {
  std::size_t step = 0;
  double metric = 0.0;
};

struct ArmResult {
  std::vector<CurvePoint> curve;
  std::optional<std::size_t> steps_to_threshold;
  double final_metric = 0.0;
  TrainLog log;
};

struct TransferOptions {
  TrainConfig train;  // model and optimizer; steps are set per phase
  SplitSizes sizes;
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 1500;
  std::size_t eval_every = 50;
  double threshold = 0.9;
  std::uint64_t seed = 1;
};

/// Pre-trained versus from-scratch fine-tuning on held-out scenes: masked-LM
/// accuracy for captioning and QA accuracy for VQA, evaluated on the
/// validation split every eval_every steps.
struct TransferResult {
  std::uint64_t seed = 0;
  ArmResult caption_pretrained, caption_scratch;
  ArmResult vqa_pretrained, vqa_scratch;
  double seconds = 0.0;
};

TransferResult run_transfer(const SceneGenerator& generator, const TransferOptions& options);

/// Region class as a pretext target (C_i withheld from the input) against
/// C_i fed through the class branch, each pre-trained and fine-tuned for
/// captioning with identical budgets.
struct AblationArm {
  std::string name;
  double bleu4 = 0.0;
  double masked_lm_accuracy = 0.0;
  std::optional<double> pretext_accuracy;
  double seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationArm> arms;
  std::string to_json() const;
  std::string to_markdown() const;
};

AblationResult run_pretext_ablation(const SceneGenerator& generator, const TransferOptions& options);

}  // namespace uvlp
