#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "model_fixtures.hpp"
#include "test_util.hpp"
#include "uvlp/decode.hpp"
#include "uvlp/embeddings.hpp"
#include "uvlp/error.hpp"
#include "uvlp/training.hpp"
#include "uvlp/transformer.hpp"

using namespace uvlp;
using namespace uvlp::testing;

namespace {

constexpr TokenId kA = special::kReservedCount;
constexpr TokenId kB = special::kReservedCount + 1;

// Hand-built next-token table over {a, b, [STOP]}: a is locally best first,
// but b [STOP] is the most likely finished sequence.
struct ToyTable {
  std::map<std::vector<TokenId>, std::array<double, 3>> probs{
      {{}, {0.5, 0.4, 0.1}},
      {{kA}, {0.35, 0.35, 0.3}},
      {{kB}, {0.05, 0.05, 0.9}},
      {{kA, kA}, {0.25, 0.25, 0.5}},
  };

  std::array<double, 3> at(std::span<const TokenId> prefix) const {
    const auto it = probs.find({prefix.begin(), prefix.end()});
    return it == probs.end() ? std::array<double, 3>{0.2, 0.3, 0.5} : it->second;
  }

  NextLogits scorer() const {
    return [this](std::span<const TokenId> prefix) {
      std::vector<double> logits(kB + 1, -50.0);
      const auto p = at(prefix);
      logits[kA] = std::log(p[0]);
      logits[kB] = std::log(p[1]);
      logits[special::kStop] = std::log(p[2]);
      return logits;
    };
  }
};

SearchSpace toy_space() { return {{special::kStop, kA, kB}, special::kStop}; }

// Best sequence of at most max_len words closed by [STOP], by enumeration.
Beam exhaustive(const ToyTable& table, std::size_t max_len) {
  Beam best;
  best.log_prob = -INFINITY;
  std::function<void(std::vector<TokenId>&, double)> walk = [&](std::vector<TokenId>& prefix, double lp) {
    const auto p = table.at(prefix);
    const TokenId ids[] = {kA, kB, special::kStop};
    for (int i = prefix.size() == max_len ? 2 : 0; i < 3; ++i) {
      prefix.push_back(ids[i]);
      const double total = lp + std::log(p[i]);
      if (ids[i] == special::kStop) {
        if (total > best.log_prob) best = {prefix, total, true};
      } else {
        walk(prefix, total);
      }
      prefix.pop_back();
    }
  };
  std::vector<TokenId> start;
  walk(start, 0.0);
  return best;
}

std::vector<SceneExample> scenes(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SceneExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_scene(rng, c, 1 + rng.below(c.text_len)));
  return out;
}

bool is_reserved(TokenId t) { return t < special::kReservedCount; }

}  // namespace

TEST_CASE("restricted log-probs renormalize over the allowed ids") {
  const std::vector<double> logits{5.0, 1.0, 2.0, 3.0};
  const std::vector<TokenId> allowed{1, 3};
  const auto lp = restricted_log_probs(logits, allowed);
  const double z = std::log(std::exp(1.0) + std::exp(3.0));
  CHECK(lp[0] == doctest::Approx(1.0 - z));
  CHECK(lp[1] == doctest::Approx(3.0 - z));
  CHECK_THROWS_AS(restricted_log_probs(logits, std::vector<TokenId>{}), ConfigError);
  CHECK_THROWS_AS(restricted_log_probs(logits, std::vector<TokenId>{4}), IndexError);
}

TEST_CASE("caption space is the ordinary words plus [STOP]") {
  const SearchSpace s = caption_space(10);
  CHECK(s.stop == special::kStop);
  CHECK(std::count(s.allowed.begin(), s.allowed.end(), special::kStop) == 1);
  for (TokenId t : s.allowed) CHECK((t == special::kStop || !is_reserved(t)));
  CHECK(s.allowed.size() == 10 - special::kReservedCount + 1);
}

TEST_CASE("beam 2 finds the exhaustive optimum where greedy does not") {
  const ToyTable table;
  const Beam oracle = exhaustive(table, 3);
  CHECK(oracle.tokens == std::vector<TokenId>{kB, special::kStop});
  CHECK(oracle.log_prob == doctest::Approx(std::log(0.36)));

  const Beam greedy = greedy_search(table.scorer(), toy_space(), 3);
  CHECK(greedy.tokens == std::vector<TokenId>{kA, kA, special::kStop});
  CHECK(greedy.log_prob < oracle.log_prob);

  const Beam beam = beam_search(table.scorer(), toy_space(), 2, 3);
  CHECK(beam.finished);
  CHECK(beam.tokens == oracle.tokens);
  CHECK(beam.log_prob == doctest::Approx(oracle.log_prob).epsilon(1e-12));
}

TEST_CASE("a beam as wide as the vocabulary is exhaustive on the toy table") {
  ToyTable table;
  Rng rng(5);
  // Random tables over every prefix up to length 2.
  std::vector<std::vector<TokenId>> prefixes{{}};
  for (TokenId x : {kA, kB}) {
    prefixes.push_back({x});
    for (TokenId y : {kA, kB}) prefixes.push_back({x, y});
  }
  for (int trial = 0; trial < 50; ++trial) {
    for (const auto& p : prefixes) {
      const double a = 0.05 + rng.uniform();
      const double b = 0.05 + rng.uniform();
      const double s = 0.05 + rng.uniform();
      table.probs[p] = {a / (a + b + s), b / (a + b + s), s / (a + b + s)};
    }
    const Beam oracle = exhaustive(table, 3);
    // Width 27 keeps every prefix alive, so nothing is pruned.
    const Beam beam = beam_search(table.scorer(), toy_space(), 27, 3);
    CHECK(beam.tokens == oracle.tokens);
    CHECK(beam.log_prob == doctest::Approx(oracle.log_prob).epsilon(1e-12));
  }
}

TEST_CASE("beam search bookkeeping") {
  const ToyTable table;
  CHECK_THROWS_AS(beam_search(table.scorer(), toy_space(), 0, 3), ConfigError);
  // A budget of one word: the search closes every hypothesis with [STOP].
  const Beam one = beam_search(table.scorer(), toy_space(), 2, 1);
  CHECK(one.tokens == std::vector<TokenId>{kB, special::kStop});
  CHECK(one.log_prob == doctest::Approx(std::log(0.4 * 0.9)));
  const Beam g1 = greedy_search(table.scorer(), toy_space(), 1);
  CHECK(g1.tokens == std::vector<TokenId>{kA, special::kStop});
  CHECK(g1.finished);
  const Beam g0 = greedy_search(table.scorer(), toy_space(), 0);
  CHECK(g0.tokens == std::vector<TokenId>{special::kStop});
  // Finished beams end in [STOP] and have non-increasing log-probability.
  const Beam b = beam_search(table.scorer(), toy_space(), 3, 3);
  CHECK(b.tokens.back() == special::kStop);
  CHECK(b.log_prob <= 0.0);
}

TEST_CASE("length normalization can prefer the longer hypothesis") {
  ToyTable table;
  table.probs[{}] = {0.55, 0.0001, 0.4499};
  // a [STOP] is 0.385 in total but better per token than [STOP] at 0.4499.
  table.probs[{kA}] = {0.15, 0.15, 0.7};
  const Beam plain = beam_search(table.scorer(), toy_space(), 3, 3, 0.0);
  CHECK(plain.tokens == std::vector<TokenId>{special::kStop});
  const Beam norm = beam_search(table.scorer(), toy_space(), 3, 3, 1.0);
  CHECK(norm.tokens == std::vector<TokenId>{kA, special::kStop});
}

TEST_CASE("beam 1 with alpha 0 equals greedy on 100 random scenes") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 21);
  for (const auto& s : scenes(c, 100, 22)) {
    const Prediction g = greedy_decode(s, w, c, c.text_len);
    const Prediction b = beam_search(s, w, c, 1, c.text_len, 0.0);
    CHECK(g.caption == b.caption);
    CHECK(g.finished == b.finished);
    CHECK(g.log_prob == b.log_prob);
  }
}

TEST_CASE("decoding never emits reserved tokens and respects the budget") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 23);
  for (const auto& s : scenes(c, 50, 24)) {
    for (const Prediction& p : {greedy_decode(s, w, c, c.text_len), beam_search(s, w, c, 3, c.text_len)}) {
      CHECK(p.caption.size() <= c.text_len);
      for (TokenId t : p.caption) CHECK_FALSE(is_reserved(t));
    }
    CHECK(greedy_decode(s, w, c, 1).caption.size() <= 1);
  }
  const SceneExample s = scenes(c, 1, 25)[0];
  CHECK_THROWS_AS(greedy_decode(s, w, c, c.text_len + 1), ConfigError);
  CHECK_THROWS_AS(beam_search(s, w, c, 2, c.text_len + 1), ConfigError);
}

TEST_CASE("the chosen token ignores whatever fills the later slots") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 26);
  const SequenceLayout layout{c.regions, c.text_len};
  Rng rng(27);
  for (const auto& s : scenes(c, 20, 28)) {
    const NextLogits next = caption_scorer(s, w, c);
    const std::size_t t = rng.below(c.text_len);
    std::vector<TokenId> prefix(s.caption.begin(), s.caption.begin() + std::min(t, s.caption.size()));
    const auto expected = next(prefix);
    // Same prefix and [MASK], but the remaining slots hold random words and
    // stay visible to the mask.
    std::vector<TokenId> slots = prefix;
    slots.push_back(special::kMask);
    while (slots.size() < layout.text_slots()) {
      slots.push_back(static_cast<TokenId>(kA + rng.below(c.vocab_size - special::kReservedCount)));
    }
    const auto in = assemble_slots(s, slots, Objective::kSeq2Seq, w.embeddings, c);
    const std::size_t col[] = {layout.text_begin() + prefix.size()};
    const Tensor logits = lm_logits(forward(in, build_seq2seq_mask(c.regions, c.text_len), w, c), col, w, c);
    for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(logits(0, v) == expected[v]);
  }
}

TEST_CASE("a wider beam never finds a worse finished caption") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 29, 0.3);
  std::size_t violations = 0;
  std::size_t compared = 0;
  for (const auto& s : scenes(c, 60, 30)) {
    double prev = -INFINITY;
    for (std::size_t b : {1, 2, 3, 5, 8}) {
      const Prediction p = beam_search(s, w, c, b, c.text_len);
      if (!p.finished) continue;
      ++compared;
      if (p.log_prob < prev - 1e-12) ++violations;
      prev = std::max(prev, p.log_prob);
    }
  }
  CHECK(compared > 0);
  CHECK(violations == 0);
}

TEST_CASE("greedy decoding reproduces an overfitted caption") {
  ModelConfig c = small_config(3, 5);
  const Vocab vocab = vocab_of_size(c.vocab_size);
  Rng rng(31);
  const std::vector<SceneExample> one{random_scene(rng, c, 5)};
  TrainConfig tc;
  tc.model = c;
  tc.batch = 4;
  tc.steps = 400;
  tc.adam.warmup = 10;
  const TrainResult r = finetune_caption(one, nullptr, tc, vocab);
  const Prediction p = greedy_decode(one[0], r.checkpoint.weights, c, c.text_len);
  CHECK(p.caption == one[0].caption);
  CHECK(p.finished);
  CHECK(beam_search(one[0], r.checkpoint.weights, c, 3, c.text_len).caption == one[0].caption);
}

TEST_CASE("VQA scores are probabilities and the ranking is sorted") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 32);
  const std::vector<TokenId> answers{6, 7, 8};
  for (const auto& s : scenes(c, 20, 33)) {
    const auto scores = vqa_scores(s, s.qa[0].question, w, c);
    REQUIRE(scores.size() == c.num_answers);
    for (double x : scores) CHECK((x > 0.0 && x < 1.0));
    const Prediction p = vqa_predict(s, s.qa[0].question, w, c, answers, 3);
    REQUIRE(p.answers.size() == 3);
    for (std::size_t i = 1; i < 3; ++i) CHECK(p.answers[i - 1].score >= p.answers[i].score);
    CHECK(p.answers[0].word == answers[p.answers[0].index]);
    CHECK(p.answers[0].score == scores[p.answers[0].index]);
  }
}

TEST_CASE("VQA ranking survives a strictly monotone transform of the logits") {
  const ModelConfig c = small_config(3, 5);
  ModelWeights w = random_weights(c, 34);
  const auto s = scenes(c, 1, 35)[0];
  const Prediction base = vqa_predict(s, s.qa[0].question, w, c, {}, 3);
  // Scaling the output layer by 2.5 multiplies every pre-sigmoid logit by 2.5.
  for (Tensor* t : {&w.vqa.output, &w.vqa.output_bias}) {
    for (double& v : t->values()) v *= 2.5;
  }
  const Prediction scaled = vqa_predict(s, s.qa[0].question, w, c, {}, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(base.answers[i].index == scaled.answers[i].index);
}

TEST_CASE("VQA prediction is deterministic and checks its inputs") {
  const ModelConfig c = small_config(3, 5);
  const ModelWeights w = random_weights(c, 36);
  const auto s = scenes(c, 1, 37)[0];
  const auto a = vqa_scores(s, s.qa[0].question, w, c);
  const auto b = vqa_scores(s, s.qa[0].question, w, c);
  CHECK(a == b);
  const std::vector<TokenId> too_long(c.text_len + 1, kA);
  CHECK_THROWS_AS(vqa_scores(s, too_long, w, c), ShapeError);
  const std::vector<TokenId> two{6, 7};
  CHECK_THROWS_AS(vqa_predict(s, s.qa[0].question, w, c, two, 1), ShapeError);
}

TEST_CASE("overfitted VQA head answers with high confidence") {
  ModelConfig c = small_config(3, 5);
  const Vocab vocab = vocab_of_size(c.vocab_size);
  Rng rng(38);
  std::vector<SceneExample> data;
  for (int i = 0; i < 4; ++i) data.push_back(random_scene(rng, c, 3));
  TrainConfig tc;
  tc.model = c;
  tc.batch = 4;
  tc.steps = 300;
  tc.adam.warmup = 10;
  const TrainResult r = finetune_vqa(data, nullptr, tc, vocab);
  for (const auto& s : data) {
    const Prediction p = vqa_predict(s, s.qa[0].question, r.checkpoint.weights, c, {}, 1);
    const std::size_t want = static_cast<std::size_t>(
        std::max_element(s.qa[0].soft_label.begin(), s.qa[0].soft_label.end()) - s.qa[0].soft_label.begin());
    CHECK(p.answers[0].index == want);
    CHECK(p.answers[0].score > 0.9);
  }
}
