#include "uvlp/experiments.hpp"

#include <chrono>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "uvlp/decode.hpp"
#include "uvlp/error.hpp"
#include "uvlp/metrics.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Fixed corruption seed so every evaluation scores the same masked slots.
constexpr std::uint64_t kEvalCorruptionSeed = 0x5eed;

TrainHooks tracking_hooks(ArmResult& arm, std::size_t every, double threshold,
                          std::function<double(const ModelWeights&)> metric) {
  TrainHooks hooks;
  hooks.eval_every = every;
  hooks.evaluate = [&arm, threshold, metric = std::move(metric)](std::size_t step, const ModelWeights& w) {
    const double m = metric(w);
    arm.curve.push_back({step, m});
    if (!arm.steps_to_threshold && m >= threshold) arm.steps_to_threshold = step;
    arm.final_metric = m;
    return false;
  };
  return hooks;
}

}  // namespace

Splits make_splits(const SceneGenerator& generator, std::uint64_t seed, std::size_t regions, const SplitSizes& sizes,
                   std::size_t answers) {
  Splits s;
  s.pretrain = generate_dataset(generator, seed, sizes.pretrain, regions, sizes.noise, 0);
  s.finetune = generate_dataset(generator, seed, sizes.finetune, regions, sizes.noise, kFinetuneFirstId);
  s.val = generate_dataset(generator, seed, sizes.val, regions, sizes.noise, kValFirstId);
  s.answers = build_answer_vocab(s.finetune, answers, generator.vocab());
  assign_soft_labels(s.val, s.answers);
  return s;
}

TransferResult run_transfer(const SceneGenerator& generator, const TransferOptions& options) {
  const auto start = Clock::now();
  const Vocab& vocab = generator.vocab();
  TrainConfig base = options.train;
  base.model.vocab_size = vocab.size();
  base.seed = options.seed;
  const Splits splits = make_splits(generator, options.seed, base.model.regions, options.sizes);
  base.model.num_answers = splits.answers.size();

  TransferResult out;
  out.seed = options.seed;

  TrainConfig pre = base;
  pre.steps = options.pretrain_steps;
  const Checkpoint pretrained = pretrain(splits.pretrain, pre, vocab).checkpoint;

  TrainConfig ft = base;
  ft.steps = options.finetune_steps;
  // Fine-tuning draws its own streams, identical for both arms.
  ft.seed = options.seed + 1000;

  auto lm_metric = [&](const ModelWeights& w) {
    return evaluate_masked_lm(splits.val, Objective::kSeq2Seq, w, ft, vocab, kEvalCorruptionSeed).accuracy;
  };
  auto qa_metric = [&](const ModelWeights& w) { return evaluate_vqa(splits.val, w, ft).accuracy; };

  for (const bool from_pre : {true, false}) {
    ArmResult& cap = from_pre ? out.caption_pretrained : out.caption_scratch;
    TrainHooks hooks = tracking_hooks(cap, options.eval_every, options.threshold, lm_metric);
    cap.log = finetune_caption(splits.finetune, from_pre ? &pretrained : nullptr, ft, vocab, hooks).log;

    ArmResult& qa = from_pre ? out.vqa_pretrained : out.vqa_scratch;
    TrainHooks qa_hooks = tracking_hooks(qa, options.eval_every, options.threshold, qa_metric);
    qa_hooks.answers = splits.answers.answers;
    qa.log = finetune_vqa(splits.finetune, from_pre ? &pretrained : nullptr, ft, vocab, qa_hooks).log;
  }
  out.seconds = seconds_since(start);
  return out;
}

AblationResult run_pretext_ablation(const SceneGenerator& generator, const TransferOptions& options) {
  const Vocab& vocab = generator.vocab();
  TrainConfig base = options.train;
  base.model.vocab_size = vocab.size();
  base.seed = options.seed;
  const Splits splits = make_splits(generator, options.seed, base.model.regions, options.sizes);
  base.model.num_answers = splits.answers.size();

  AblationResult result;
  for (const bool pretext : {true, false}) {
    const auto start = Clock::now();
    TrainConfig c = base;
    c.model.region_pretext = pretext;
    c.model.class_probs_as_input = !pretext;
    AblationArm arm;
    arm.name = pretext ? "region-label-as-pretext" : "region-label-probability-as-input";

    c.steps = options.pretrain_steps;
    const Checkpoint pre = pretrain(splits.pretrain, c, vocab).checkpoint;
    c.steps = options.finetune_steps;
    c.seed = options.seed + 1000;
    const ModelWeights w = finetune_caption(splits.finetune, &pre, c, vocab).checkpoint.weights;

    std::vector<Sentence> hyps;
    std::vector<std::vector<Sentence>> refs;
    for (const auto& s : splits.val) {
      hyps.push_back(words_of(greedy_decode(s, w, c.model, c.model.text_len).caption, vocab));
      refs.push_back({words_of(s.caption, vocab)});
    }
    arm.bleu4 = bleu4(hyps, refs);
    arm.masked_lm_accuracy =
        evaluate_masked_lm(splits.val, Objective::kSeq2Seq, w, c, vocab, kEvalCorruptionSeed).accuracy;
    if (pretext) {
      // Region classification from the pre-trained trunk, blanked regions only.
      ModelWeights frozen = pre.weights;
      Rng rng(kEvalCorruptionSeed);
      std::vector<const SceneExample*> batch;
      for (const auto& s : splits.val) batch.push_back(&s);
      arm.pretext_accuracy = region_pretext_loss(batch, frozen, c, rng).accuracy;
    }
    arm.seconds = seconds_since(start);
    result.arms.push_back(arm);
  }
  return result;
}

std::string AblationResult::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : arms) {
    nlohmann::json e{{"arm", a.name}, {"bleu4", a.bleu4}, {"masked_lm_accuracy", a.masked_lm_accuracy},
                     {"seconds", a.seconds}};
    e["pretext_accuracy"] = a.pretext_accuracy ? nlohmann::json(*a.pretext_accuracy) : nlohmann::json(nullptr);
    j.push_back(e);
  }
  return nlohmann::json{{"ablation", "region-label"}, {"arms", j}}.dump(2) + "\n";
}

std::string AblationResult::to_markdown() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "| arm | BLEU@4 | masked-LM acc | pretext acc |\n|---|---|---|---|\n";
  for (const auto& a : arms) {
    out << "| " << a.name << " | " << a.bleu4 << " | " << a.masked_lm_accuracy << " | ";
    if (a.pretext_accuracy) {
      out << *a.pretext_accuracy;
    } else {
      out << "-";
    }
    out << " |\n";
  }
  return out.str();
}

}  // namespace uvlp
