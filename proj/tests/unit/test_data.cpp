#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "uvlp/data.hpp"
#include "uvlp/error.hpp"
#include "uvlp/io_util.hpp"
#include "uvlp/vocab.hpp"

using namespace uvlp;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("uvlp_test_data_" + name);
}

}  // namespace

TEST_CASE("vocab reserves ids 0..5 in order") {
  Vocab v({"red", "square"});
  CHECK(v.token(special::kCls) == "[CLS]");
  CHECK(v.token(special::kSep) == "[SEP]");
  CHECK(v.token(special::kStop) == "[STOP]");
  CHECK(v.token(special::kMask) == "[MASK]");
  CHECK(v.token(special::kPad) == "[PAD]");
  CHECK(v.token(special::kUnk) == "[UNK]");
  CHECK(v.id("red") == 6);
  CHECK(v.id("square") == 7);
  CHECK(v.id("nope") == special::kUnk);
  CHECK_THROWS_AS(Vocab({"red", "red"}), ConfigError);
  for (TokenId id = special::kReservedCount; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
}

TEST_CASE("tokenize trims, pads and maps unknown words") {
  Vocab v({"a", "red", "square"});
  auto t = tokenize("a red square", v, 5);
  CHECK(t.ids == std::vector<TokenId>{v.id("a"), v.id("red"), v.id("square"), special::kPad, special::kPad});
  CHECK(t.length == 3);

  std::string long_text;
  for (int i = 0; i < 25; ++i) long_text += (i % 2 ? "red " : "a ");
  auto l = tokenize(long_text, v, 20);
  CHECK(l.ids.size() == 20);
  CHECK(l.length == 20);
  CHECK(l.ids[19] == v.id("red"));

  auto u = tokenize("zzz-unknown", v, 2);
  CHECK(u.ids == std::vector<TokenId>{special::kUnk, special::kPad});
  CHECK(u.length == 1);

  auto e = tokenize("", v, 3);
  CHECK(e.empty);
  CHECK(e.length == 0);
  CHECK(e.ids == std::vector<TokenId>(3, special::kPad));

  CHECK(tokenize("  A   Red\tsquare ", v, 4).length == 3);
}

TEST_CASE("detokenize inverts tokenize on in-vocabulary text") {
  const auto g = default_grammar();
  const Vocab v = vocab_from_grammar(g);
  SceneGenerator gen(g);
  for (const auto& s : generate_dataset(gen, 3, 50, 8, 0.1)) {
    const std::string text = detokenize(s.caption, v);
    const auto t = tokenize(text, v, 20);
    CHECK(detokenize(t.ids, v) == text);
  }
}

TEST_CASE("scene generation is deterministic") {
  const auto g = default_grammar();
  const auto a = generate_scene(77, g, 8, 0.3);
  const auto b = generate_scene(77, g, 8, 0.3);
  CHECK(a == b);
  CHECK_FALSE(a == generate_scene(78, g, 8, 0.3));
}

TEST_CASE("generated regions satisfy the region invariants") {
  SceneGenerator gen(default_grammar());
  for (const auto& s : generate_dataset(gen, 11, 300, 8, 0.5)) {
    REQUIRE(s.regions.size() == 8);
    for (const auto& r : s.regions) {
      CHECK_NOTHROW(validate_region(r));
      double sum = 0.0;
      for (double p : r.class_probs) {
        CHECK(p >= 0.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
      CHECK(r.geometry[2] > r.geometry[0]);
      CHECK(r.geometry[3] > r.geometry[1]);
      CHECK(std::abs(r.geometry[4] - (r.geometry[2] - r.geometry[0]) * (r.geometry[3] - r.geometry[1])) < 1e-9);
    }
    CHECK(s.caption.size() <= 20);
  }
}

TEST_CASE("validate_region rejects broken records") {
  Region r;
  r.features = {0.0};
  r.class_probs = {0.5, 0.4};
  r.geometry = {0.1, 0.1, 0.2, 0.2, 0.01};
  CHECK_THROWS_AS(validate_region(r), ConfigError);
  r.class_probs = {0.5, 0.5};
  CHECK_NOTHROW(validate_region(r));
  r.geometry = {0.3, 0.1, 0.2, 0.2, 0.01};
  CHECK_THROWS_AS(validate_region(r), ConfigError);
}

TEST_CASE("noiseless class probabilities peak at the true class") {
  const auto g = default_grammar();
  const Vocab v = vocab_from_grammar(g);
  SceneGenerator gen(g);
  for (const auto& s : generate_dataset(gen, 5, 100, 8, 0.0)) {
    for (const auto& r : s.regions) {
      // With zero noise the class one-hot is the first block of the features.
      const auto true_cls = static_cast<std::size_t>(
          std::max_element(r.features.begin(), r.features.begin() + 16) - r.features.begin());
      const auto predicted =
          static_cast<std::size_t>(std::max_element(r.class_probs.begin(), r.class_probs.end()) - r.class_probs.begin());
      CHECK(predicted == true_cls);
    }
  }
}

TEST_CASE("every caption is consistent with its scene") {
  const auto g = default_grammar();
  const Vocab v = vocab_from_grammar(g);
  SceneGenerator gen(g);
  // The checker reads attributes back out of the feature bits, so the
  // scenes must be noiseless.
  std::size_t consistent = 0;
  const auto scenes = generate_dataset(gen, 2024, 1000, 8, 0.0);
  for (const auto& s : scenes) consistent += caption_consistent(s, g, v);
  CHECK(consistent == 1000);

  // A caption with the relation flipped must be rejected.
  SceneExample broken = scenes[0];
  for (auto& id : broken.caption) {
    if (id == v.id("left")) {
      id = v.id("right");
    } else if (id == v.id("right")) {
      id = v.id("left");
    } else if (id == v.id("above")) {
      id = v.id("below");
    } else if (id == v.id("below")) {
      id = v.id("above");
    }
  }
  CHECK_FALSE(caption_consistent(broken, g, v));
}

TEST_CASE("too few regions for the objects is a config error") {
  CHECK_THROWS_AS(generate_scene(1, default_grammar(), 1, 0.0), ConfigError);
}

TEST_CASE("grammar json round-trips and is validated") {
  const auto g = default_grammar();
  const auto back = grammar_from_json(grammar_to_json(g));
  CHECK(grammar_to_json(back) == grammar_to_json(g));
  auto bad = g;
  bad.caption_templates.push_back("a {obj0} {colour}");
  CHECK_THROWS_AS(validate_grammar(bad), ConfigError);
  CHECK_THROWS_AS(grammar_from_json("{\"classes\": 3}"), ConfigError);
}

TEST_CASE("dataset files round-trip") {
  SceneGenerator gen(default_grammar());
  auto scenes = generate_dataset(gen, 9, 100, 8, 0.37);
  build_answer_vocab(scenes, 32, gen.vocab());
  const auto path = temp_path("roundtrip.jsonl");
  write_dataset(scenes, path);
  CHECK(read_dataset(path) == scenes);
  std::filesystem::remove(path);
}

TEST_CASE("truncated final line reports its line number") {
  SceneGenerator gen(default_grammar());
  const auto scenes = generate_dataset(gen, 4, 3, 8, 0.1);
  const auto path = temp_path("truncated.jsonl");
  write_dataset(scenes, path);
  std::string text = read_text_file(path);
  text.resize(text.size() - 40);
  write_file_atomic(path, text);
  try {
    read_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("empty dataset file yields no scenes") {
  const auto path = temp_path("empty.jsonl");
  write_file_atomic(path, "");
  CHECK(read_dataset(path).empty());
  std::filesystem::remove(path);
}

namespace {

std::vector<SceneExample> with_answers(const Vocab& v, const std::vector<std::pair<std::string, int>>& counts) {
  std::vector<SceneExample> out(1);
  for (const auto& [word, n] : counts) {
    for (int i = 0; i < n; ++i) out[0].qa.push_back(QaPair{{v.id("what")}, v.id(word), {}});
  }
  return out;
}

}  // namespace

TEST_CASE("answer vocab keeps the most frequent answers") {
  Vocab v({"blue", "red", "two", "what"});
  auto ex = with_answers(v, {{"red", 5}, {"blue", 3}, {"two", 1}});
  const auto av = build_answer_vocab(ex, 2, v);
  CHECK(av.answers == std::vector<TokenId>{v.id("red"), v.id("blue")});
  CHECK_FALSE(av.warning.has_value());
  // Soft labels are one-hot over the kept answers; the dropped answer gets none.
  CHECK(ex[0].qa[0].soft_label == std::vector<double>{1.0, 0.0});
  CHECK(ex[0].qa[5].soft_label == std::vector<double>{0.0, 1.0});
  CHECK(ex[0].qa[8].soft_label == std::vector<double>{0.0, 0.0});
}

TEST_CASE("answer vocab breaks ties lexicographically") {
  Vocab v({"blue", "red", "what"});
  auto ex = with_answers(v, {{"red", 2}, {"blue", 2}});
  CHECK(build_answer_vocab(ex, 1, v).answers == std::vector<TokenId>{v.id("blue")});
}

TEST_CASE("answer vocab warns when fewer answers exist than requested") {
  Vocab v({"blue", "red", "what"});
  auto ex = with_answers(v, {{"red", 2}, {"blue", 1}});
  const auto av = build_answer_vocab(ex, 3129, v);
  CHECK(av.size() == 2);
  CHECK(av.warning.has_value());
  CHECK_THROWS_AS(build_answer_vocab(ex, 0, v), ConfigError);
}

TEST_CASE("default grammar yields 32 distinct answers") {
  SceneGenerator gen(default_grammar());
  auto scenes = generate_dataset(gen, 1, 2000, 8, 0.0);
  const auto av = build_answer_vocab(scenes, 32, gen.vocab());
  CHECK(av.size() == 32);
  CHECK_FALSE(av.warning.has_value());
}
