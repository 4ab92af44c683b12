#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <utility>
#include <nlohmann/json.hpp>

#include "model_fixtures.hpp"
#include "test_util.hpp"
#include "uvlp/checkpoint.hpp"
#include "uvlp/embeddings.hpp"
#include "uvlp/error.hpp"
#include "uvlp/training.hpp"
#include "uvlp/transformer.hpp"

using namespace uvlp;
using namespace uvlp::testing;

namespace {

struct Toy {
  ModelConfig model = small_config(3, 4);
  Vocab vocab = vocab_of_size(14);
  std::vector<SceneExample> scenes;

  explicit Toy(std::size_t count, std::uint64_t seed = 5) {
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) scenes.push_back(random_scene(rng, model, 1 + rng.below(4)));
  }

  TrainConfig train(std::size_t steps) const {
    TrainConfig c;
    c.model = model;
    c.batch = 4;
    c.steps = steps;
    c.adam.warmup = 10;
    return c;
  }
};

std::vector<const SceneExample*> pointers(const std::vector<SceneExample>& v) {
  std::vector<const SceneExample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

void expect_same_weights(const ModelWeights& a, const ModelWeights& b) {
  const auto na = a.named();
  const auto nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    INFO(na[i].first);
    CHECK(na[i].first == nb[i].first);
    CHECK(bitwise_equal(*na[i].second, *nb[i].second));
  }
}

// Replaces the manifest of a serialized checkpoint after editing it.
std::string edit_manifest(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 6, 8);
  nlohmann::json m = nlohmann::json::parse(bytes.substr(14, len));
  edit(m);
  const std::string text = m.dump();
  std::uint64_t new_len = text.size();
  std::string out = bytes.substr(0, 6);
  out.append(reinterpret_cast<const char*>(&new_len), 8);
  out += text;
  out += bytes.substr(14 + len);
  return out;
}

Checkpoint random_checkpoint(std::uint64_t seed) {
  Checkpoint ck;
  ck.config = small_config();
  ck.step = 42;
  ck.weights = random_weights(ck.config, seed);
  ck.vocab_tokens = vocab_of_size(14).tokens();
  ck.answers = {6, 7, 8};
  return ck;
}

}  // namespace

TEST_CASE("loss registry has no image-text matching term") {
  CHECK(loss_registry() == std::vector<std::string>{"masked-lm", "region-pretext", "vqa-bce"});
}

TEST_CASE("uniform logits give a loss of ln v") {
  Toy toy(4);
  TrainConfig c = toy.train(1);
  ModelWeights w = random_weights(toy.model, 3);
  for (double& v : w.embeddings.token.values()) v = 0.0;
  for (double& v : w.lm.output_bias.values()) v = 0.0;
  Rng rng(1);
  const auto batch = pointers(toy.scenes);
  for (Objective obj : {Objective::kSeq2Seq, Objective::kBidirectional}) {
    const LossValue l = masked_lm_loss(batch, obj, w, c, toy.vocab, rng);
    CHECK(l.loss == doctest::Approx(std::log(14.0)).epsilon(1e-12));
    CHECK(l.count > 0);
  }
}

TEST_CASE("both objectives see the same corruption but different context") {
  Toy toy(4);
  const TrainConfig c = toy.train(1);
  ModelWeights w = random_weights(toy.model, 4);
  const auto batch = pointers(toy.scenes);
  Rng a(17);
  Rng b(17);
  const LossValue s2s = masked_lm_loss(batch, Objective::kSeq2Seq, w, c, toy.vocab, a);
  const LossValue bi = masked_lm_loss(batch, Objective::kBidirectional, w, c, toy.vocab, b);
  CHECK(s2s.count == bi.count);
  CHECK(a.next_u64() == b.next_u64());  // identical number of draws
  CHECK(s2s.loss != bi.loss);
}

TEST_CASE("masked-LM loss averages over the masked positions") {
  Toy toy(3);
  TrainConfig c = toy.train(1);
  c.corruption.rate = 0.5;
  const ModelWeights w = random_weights(toy.model, 5);
  const auto batch = pointers(toy.scenes);
  Rng rng(23);
  ModelWeights copy = w;
  const LossValue got = masked_lm_loss(batch, Objective::kSeq2Seq, copy, c, toy.vocab, rng);

  // Replay the corruption and score each example on its own.
  Rng replay(23);
  double total = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  const SequenceLayout layout{toy.model.regions, toy.model.text_len};
  for (const SceneExample* s : batch) {
    const auto slots = make_text_slots(s->caption, toy.model.text_len);
    const Corruption cor = corrupt_tokens(slots, replay, c.corruption, toy.vocab);
    const auto in = assemble_slots(*s, cor.ids, Objective::kSeq2Seq, w.embeddings, toy.model);
    const AttentionMask mask = build_seq2seq_mask(toy.model.regions, toy.model.text_len, pad_pattern(slots));
    std::vector<std::size_t> cols;
    for (std::size_t p : cor.plan.positions) cols.push_back(layout.text_begin() + p);
    const Tensor logits = lm_logits(forward(in, mask, w, toy.model), cols, w, toy.model);
    for (std::size_t n = 0; n < cols.size(); ++n) {
      double top = -INFINITY;
      std::size_t arg = 0;
      for (std::size_t v = 0; v < logits.cols(); ++v) {
        top = std::max(top, logits(n, v));
        if (logits(n, v) > logits(n, arg)) arg = v;
      }
      double z = 0.0;
      for (std::size_t v = 0; v < logits.cols(); ++v) z += std::exp(logits(n, v) - top);
      total += top + std::log(z) - logits(n, cor.plan.original[n]);
      correct += arg == cor.plan.original[n];
      ++count;
    }
  }
  CHECK(got.count == count);
  CHECK(got.loss == doctest::Approx(total / static_cast<double>(count)).epsilon(1e-10));
  CHECK(got.accuracy == doctest::Approx(static_cast<double>(correct) / static_cast<double>(count)));
}

TEST_CASE("overfitting one example drives the masked-LM loss to zero") {
  Toy toy(1);
  TrainConfig c = toy.train(400);
  c.model.dropout = 0.0;
  const TrainResult r = finetune_caption(toy.scenes, nullptr, c, toy.vocab);
  const LossValue l = evaluate_masked_lm(toy.scenes, Objective::kSeq2Seq, r.checkpoint.weights, c, toy.vocab, 3);
  CHECK(l.loss < 0.05);
  CHECK(l.accuracy == 1.0);
}

TEST_CASE("lambda 0.75 over 1000 steps gives exactly 750 seq2seq batches") {
  Toy toy(8);
  TrainConfig c = toy.train(1000);
  c.batch = 1;
  c.model.layers = 1;
  c.lambda = 0.75;
  const TrainResult r = pretrain(toy.scenes, c, toy.vocab);
  CHECK(r.log.size() == 1000);
  CHECK(r.log.count(Objective::kSeq2Seq) == 750);
  CHECK(r.log.count(Objective::kBidirectional) == 250);
}

TEST_CASE("identical seeds give bitwise identical runs") {
  Toy toy(6);
  TrainConfig c = toy.train(25);
  c.model.dropout = 0.1;
  const TrainResult a = pretrain(toy.scenes, c, toy.vocab);
  const TrainResult b = pretrain(toy.scenes, c, toy.vocab);
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  CHECK(a.log.to_csv(false) == b.log.to_csv(false));
  c.seed = 2;
  const TrainResult other = pretrain(toy.scenes, c, toy.vocab);
  CHECK(serialize_checkpoint(a.checkpoint) != serialize_checkpoint(other.checkpoint));
}

TEST_CASE("pretraining lowers the loss on the synthetic corpus") {
  SceneGenerator gen(default_grammar());
  TrainConfig c;  // desk defaults
  const auto data = generate_dataset(gen, 11, 256, c.model.regions, 0.2);
  const TrainResult r = pretrain(data, c, gen.vocab());
  REQUIRE(r.log.size() == 500);
  CHECK(r.log.records()[499].loss < r.log.records()[0].loss);
}

TEST_CASE("caption fine-tuning logs seq2seq at every step") {
  Toy toy(6);
  const TrainResult r = finetune_caption(toy.scenes, nullptr, toy.train(20), toy.vocab);
  CHECK(r.log.count(Objective::kSeq2Seq) == 20);
}

TEST_CASE("VQA fine-tuning logs bidirectional at every step") {
  Toy toy(6);
  const TrainResult r = finetune_vqa(toy.scenes, nullptr, toy.train(20), toy.vocab);
  CHECK(r.log.count(Objective::kBidirectional) == 20);
}

TEST_CASE("loading a checkpoint changes no trunk tensor before the first update") {
  Toy toy(6);
  const TrainResult pre = pretrain(toy.scenes, toy.train(10), toy.vocab);
  TrainConfig c = toy.train(1);
  c.adam.lr = 0.0;  // make the single step a no-op so the loaded state is observable
  const TrainResult ft = finetune_caption(toy.scenes, &pre.checkpoint, c, toy.vocab);
  expect_same_weights(ft.checkpoint.weights, pre.checkpoint.weights);
}

TEST_CASE("VQA fine-tuning always starts from a fresh head") {
  Toy toy(6);
  const TrainResult pre = pretrain(toy.scenes, toy.train(10), toy.vocab);
  TrainConfig c = toy.train(1);
  c.adam.lr = 0.0;
  const TrainResult ft = finetune_vqa(toy.scenes, &pre.checkpoint, c, toy.vocab);
  const auto& got = ft.checkpoint.weights;
  CHECK_FALSE(bitwise_equal(got.vqa.hidden, pre.checkpoint.weights.vqa.hidden));
  RunStreams streams(c.seed);
  const VqaHead fresh = init_vqa_head(c.model, streams.init());
  CHECK(bitwise_equal(got.vqa.hidden, fresh.hidden));
  CHECK(bitwise_equal(got.vqa.output, fresh.output));
  CHECK(bitwise_equal(got.embeddings.token, pre.checkpoint.weights.embeddings.token));
  CHECK(bitwise_equal(got.layers[1].ffn_out, pre.checkpoint.weights.layers[1].ffn_out));
}

TEST_CASE("fine-tuning rejects an incompatible checkpoint and names the fields") {
  Toy toy(4);
  const TrainResult pre = pretrain(toy.scenes, toy.train(2), toy.vocab);
  TrainConfig c = toy.train(2);
  c.model.layers = 3;
  c.model.ffn = 48;
  try {
    finetune_caption(toy.scenes, &pre.checkpoint, c, toy.vocab);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layers") != std::string::npos);
    CHECK(msg.find("ffn") != std::string::npos);
    CHECK(msg.find("hidden") == std::string::npos);
  }
  CHECK_THROWS_AS(finetune_vqa(toy.scenes, &pre.checkpoint, c, toy.vocab), ConfigError);
}

TEST_CASE("training rejects an empty dataset and a vocabulary mismatch") {
  Toy toy(2);
  CHECK_THROWS_AS(pretrain({}, toy.train(1), toy.vocab), ConfigError);
  TrainConfig c = toy.train(1);
  c.model.vocab_size = 20;
  CHECK_THROWS_AS(pretrain(toy.scenes, c, toy.vocab), ConfigError);
}

TEST_CASE("a non-finite loss aborts with the step number") {
  Toy toy(4);
  TrainConfig c = toy.train(5);
  c.adam.lr = 1e308;
  c.adam.warmup = 0;
  c.clip_norm = 0.0;
  try {
    pretrain(toy.scenes, c, toy.vocab);
    FAIL("expected a non-finite error");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("step ") != std::string::npos);
  }
}

TEST_CASE("region pretext requires its head") {
  Toy toy(3);
  ModelWeights w = random_weights(toy.model, 6);
  Rng rng(1);
  const auto batch = pointers(toy.scenes);
  CHECK_THROWS_AS(region_pretext_loss(batch, w, toy.train(1), rng), ConfigError);
}

TEST_CASE("region pretext selects at least one region per example") {
  Toy toy(5);
  toy.model.region_pretext = true;
  toy.model.class_probs_as_input = false;
  TrainConfig c = toy.train(1);
  c.pretext_rate = 1e-9;
  Rng init(2);
  ModelWeights w = init_weights(toy.model, init);
  REQUIRE(w.pretext.has_value());
  Rng rng(3);
  const auto batch = pointers(toy.scenes);
  const LossValue l = region_pretext_loss(batch, w, c, rng);
  CHECK(l.count == toy.scenes.size());
}

TEST_CASE("pretext training fits noiseless region classes") {
  SceneGenerator gen(default_grammar());
  ModelConfig m = small_config(4, 20, gen.vocab().size());
  m.hidden = 32;
  m.ffn = 128;
  m.max_positions = 32;
  m.feature_dim = 32;
  m.num_classes = 16;
  m.region_pretext = true;
  m.class_probs_as_input = false;
  TrainConfig c;
  c.model = m;
  c.batch = 8;
  c.steps = 2000;
  c.pretext_rate = 0.5;
  const auto data = generate_dataset(gen, 3, 16, m.regions, 0.0);
  const std::size_t nc = gen.grammar().classes.size();
  const std::size_t na = gen.grammar().colors.size() + gen.grammar().sizes.size();

  // Blank each real (non-distractor) region alone and classify it.
  auto score = [&](const ModelWeights& w) {
    std::pair<std::size_t, std::size_t> out{0, 0};
    for (const auto& s : data) {
      for (std::size_t j = 0; j < s.regions.size(); ++j) {
        // Distractors carry no attribute one-hots and are never mentioned.
        const auto& f = s.regions[j].features;
        if (std::all_of(f.begin() + nc, f.begin() + nc + na, [](double x) { return x == 0.0; })) continue;
        const std::size_t zeroed[] = {j};
        Tape tape(false);
        const BoundWeights b = bind(tape, w);
        const auto slots = make_text_slots(s.caption, m.text_len);
        Var h0 = embed_sequence(b.embeddings, pack_regions(s, m, zeroed), slots, Objective::kBidirectional, m);
        const AttentionMask mask = build_bidirectional_mask(m.regions, m.text_len, pad_pattern(slots));
        const AttentionMask* masks[] = {&mask};
        Var h = encode(h0, masks, b.layers, m);
        const std::size_t col[] = {j + 1};
        const Tensor logits = pretext_logits(h, col, *b.pretext).value();
        std::size_t arg = 0;
        for (std::size_t k = 1; k < logits.cols(); ++k) arg = logits(0, k) > logits(0, arg) ? k : arg;
        const auto& p = s.regions[j].class_probs;
        out.first += arg == static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        ++out.second;
      }
    }
    return out;
  };
  std::pair<std::size_t, std::size_t> last{0, 0};
  TrainHooks hooks;
  hooks.eval_every = 200;
  hooks.evaluate = [&](std::size_t, const ModelWeights& w) {
    last = score(w);
    return last.first == last.second;
  };
  pretrain(data, c, gen.vocab(), hooks);
  CHECK(last.second > 0);
  CHECK(last.first == last.second);
}

TEST_CASE("VQA loss matches a hand-assembled forward") {
  Toy toy(3);
  const TrainConfig c = toy.train(1);
  ModelWeights w = random_weights(toy.model, 7);
  const auto items = qa_items(toy.scenes);
  const LossValue got = vqa_loss(items, w, c);

  const ModelConfig& m = toy.model;
  const SequenceLayout layout{m.regions, m.text_len};
  double total = 0.0;
  for (const QaItem& it : items) {
    const QaPair& qa = it.scene->qa[it.qa];
    // Question ids go in verbatim: no corruption on this path.
    const auto slots = make_text_slots(qa.question, m.text_len);
    const auto in = assemble_slots(*it.scene, slots, Objective::kBidirectional, w.embeddings, m);
    const Tensor h = forward(in, build_bidirectional_mask(m.regions, m.text_len, pad_pattern(slots)), w, m);
    std::vector<double> z(m.hidden);
    for (std::size_t i = 0; i < m.hidden; ++i) z[i] = h(i, 0) * h(i, layout.sep());
    std::vector<double> hid(m.vqa_hidden);
    for (std::size_t r = 0; r < m.vqa_hidden; ++r) {
      double a = w.vqa.hidden_bias[r];
      for (std::size_t i = 0; i < m.hidden; ++i) a += w.vqa.hidden(r, i) * z[i];
      hid[r] = std::max(a, 0.0);
    }
    for (std::size_t k = 0; k < m.num_answers; ++k) {
      double s = w.vqa.output_bias[k];
      for (std::size_t r = 0; r < m.vqa_hidden; ++r) s += w.vqa.output(k, r) * hid[r];
      const double p = 1.0 / (1.0 + std::exp(-s));
      total -= qa.soft_label[k] * std::log(p) + (1.0 - qa.soft_label[k]) * std::log(1.0 - p);
    }
  }
  CHECK(got.loss == doctest::Approx(total / static_cast<double>(items.size() * m.num_answers)).epsilon(1e-10));
}

TEST_CASE("VQA loss with a zeroed head is ln 2") {
  Toy toy(4);
  ModelWeights w = random_weights(toy.model, 8);
  for (Tensor* t : {&w.vqa.output, &w.vqa.output_bias}) {
    for (double& v : t->values()) v = 0.0;
  }
  const auto items = qa_items(toy.scenes);
  CHECK(vqa_loss(items, w, toy.train(1)).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("BCE against a 0.5 soft label is stationary at score 0.5") {
  const std::vector<double> targets{0.5, 0.5};
  auto at = [&](double logit) {
    Tape tape;
    Tensor x = Tensor::column({logit, logit});
    x.set_requires_grad(true);
    Var l = ad::bce_with_logits_mean(tape.parameter(x), targets);
    tape.backward(l);
    return std::pair{l.value()[0], x.grad()[0]};
  };
  const auto [l0, g0] = at(0.0);
  CHECK(g0 == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l0 == doctest::Approx(std::log(2.0)));
  CHECK(at(0.3).first > l0);
  CHECK(at(-0.3).first > l0);
}

TEST_CASE("VQA fine-tuning overfits a handful of questions") {
  Toy toy(8);
  TrainConfig c = toy.train(300);
  const TrainResult r = finetune_vqa(toy.scenes, nullptr, c, toy.vocab);
  CHECK(evaluate_vqa(toy.scenes, r.checkpoint.weights, c).accuracy == 1.0);
}

TEST_CASE("checkpoint save and load is the identity") {
  const Checkpoint ck = random_checkpoint(9);
  const auto path = std::filesystem::temp_directory_path() / "uvlp_test_ck.bin";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.config == ck.config);
  CHECK(back.step == 42);
  CHECK(back.vocab_tokens == ck.vocab_tokens);
  CHECK(back.answers == ck.answers);
  expect_same_weights(back.weights, ck.weights);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
}

TEST_CASE("checkpoint with a pretext head round-trips") {
  Checkpoint ck = random_checkpoint(10);
  ck.config.region_pretext = true;
  ck.config.class_probs_as_input = false;
  ck.weights = random_weights(ck.config, 10);
  REQUIRE(ck.weights.pretext.has_value());
  expect_same_weights(parse_checkpoint(serialize_checkpoint(ck)).weights, ck.weights);
}

TEST_CASE("checkpoint corruption maps to distinct errors") {
  const std::string bytes = serialize_checkpoint(random_checkpoint(11));
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), CheckpointTruncatedError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 10)), CheckpointTruncatedError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), CheckpointError);

  const std::string v2 = edit_manifest(bytes, [](nlohmann::json& m) { m["format_version"] = 2; });
  CHECK_THROWS_AS(parse_checkpoint(v2), CheckpointVersionError);

  const std::string reshaped = edit_manifest(bytes, [](nlohmann::json& m) {
    for (auto& t : m["tensors"]) {
      if (t["name"] == "layers.1.value") t["shape"] = {8, 32};
    }
  });
  try {
    parse_checkpoint(reshaped);
    FAIL("expected a shape error");
  } catch (const CheckpointShapeError& e) {
    CHECK(std::string(e.what()).find("layers.1.value") != std::string::npos);
  }
}

TEST_CASE("train log CSV round-trips and keeps steps increasing") {
  TrainLog log;
  log.append({1, Objective::kSeq2Seq, 2.5, 0.1, 3.0});
  log.append({2, Objective::kBidirectional, 2.25, 0.125, 6.5});
  const std::string csv = log.to_csv();
  CHECK(csv.rfind("step,objective,loss,acc,wallclock_ms\n", 0) == 0);
  const TrainLog back = TrainLog::from_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back.records()[1].objective == Objective::kBidirectional);
  CHECK(back.records()[1].loss == 2.25);
  CHECK(back.records()[1].wallclock_ms == 6.5);
  CHECK_THROWS_AS(log.append({2, Objective::kSeq2Seq, 1.0, 0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(TrainLog::from_csv("step,objective,loss,acc,wallclock_ms\n2,x,1,1,1\n"), ParseError);
}
