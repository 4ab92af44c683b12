#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uvlp/vocab.hpp"

namespace uvlp {

/// One detected region: appearance features, class distribution and box.
struct Region {
  std::vector<double> features;
  std::vector<double> class_probs;
  /// x1, y1, x2, y2 in [0, 1] (y grows downward) followed by relative area.
  std::array<double, 5> geometry{};

  friend bool operator==(const Region&, const Region&) = default;
};

struct QaPair {
  std::vector<TokenId> question;
  TokenId answer = special::kUnk;
  /// One entry per answer class; empty until an answer vocabulary is built.
  std::vector<double> soft_label;

  friend bool operator==(const QaPair&, const QaPair&) = default;
};

struct SceneExample {
  std::uint64_t scene_id = 0;
  std::vector<Region> regions;
  std::vector<TokenId> caption;  // unpadded
  std::vector<QaPair> qa;

  friend bool operator==(const SceneExample&, const SceneExample&) = default;
};

/// Throws ConfigError describing the first violated region invariant.
void validate_region(const Region& region);

struct RelationSpec {
  std::string name;    // left_of, right_of, above or below
  std::string phrase;  // surface words, e.g. "left of"
};

struct QuestionTemplate {
  std::string kind;  // color, shape, size, count or exists
  std::string text;  // may use {size}, {color} and {class}
};

/// Closed grammar behind the synthetic scenes. Caption templates use the
/// slots {obj0}..{obj3}, each realized as "<size> <color> <class>", and
/// {rel} for the relation between the first two mentioned objects.
struct GrammarSpec {
  std::vector<std::string> classes;
  std::vector<std::string> colors;
  std::vector<std::string> sizes;
  std::vector<RelationSpec> relations;
  std::vector<std::string> caption_templates;
  std::vector<QuestionTemplate> question_templates;
  std::vector<std::string> count_words;  // indexed by count
  std::string yes = "yes";
  std::string no = "no";
  std::size_t feature_dim = 32;
  double class_logit_scale = 5.0;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
};

GrammarSpec default_grammar();
GrammarSpec load_grammar(const std::filesystem::path& path);
std::string grammar_to_json(const GrammarSpec& spec);
GrammarSpec grammar_from_json(const std::string& text);
/// Throws ConfigError when a template uses an undeclared slot or word class.
void validate_grammar(const GrammarSpec& spec);
/// Sorted words reachable from the grammar.
Vocab vocab_from_grammar(const GrammarSpec& spec);

class SceneGenerator {
 public:
  explicit SceneGenerator(GrammarSpec spec);

  const GrammarSpec& grammar() const noexcept { return spec_; }
  const Vocab& vocab() const noexcept { return vocab_; }

  /// Pure function of (seed, grammar, regions, noise).
  SceneExample generate(std::uint64_t seed, std::size_t regions, double noise) const;

 private:
  GrammarSpec spec_;
  Vocab vocab_;
};

SceneExample generate_scene(std::uint64_t seed, const GrammarSpec& spec, std::size_t regions, double noise);

/// Generates `count` scenes with scene ids first_id, first_id + 1, ...
std::vector<SceneExample> generate_dataset(const SceneGenerator& generator, std::uint64_t seed,
                                           std::size_t count, std::size_t regions, double noise,
                                           std::uint64_t first_id = 0);

/// Independent replay of the caption grammar against the region records:
/// parses the caption with the templates and checks every mention and the
/// relation against attributes read back from the features and boxes.
bool caption_consistent(const SceneExample& scene, const GrammarSpec& spec, const Vocab& vocab);

void write_dataset(const std::vector<SceneExample>& examples, const std::filesystem::path& path);
std::vector<SceneExample> read_dataset(const std::filesystem::path& path);
std::string scene_to_json_line(const SceneExample& scene);
SceneExample scene_from_json_line(const std::string& line, std::size_t line_number);

struct AnswerVocab {
  std::vector<TokenId> answers;  // class index -> answer word id
  std::optional<std::string> warning;

  std::size_t size() const noexcept { return answers.size(); }
  /// Class index of a word, if it is one of the answers.
  std::optional<std::size_t> index_of(TokenId word) const;
};

/// Keeps the k most frequent answers (ties broken by token string) and
/// assigns each QA pair a one-hot soft label over them.
AnswerVocab build_answer_vocab(std::vector<SceneExample>& examples, std::size_t k, const Vocab& vocab);
void assign_soft_labels(std::vector<SceneExample>& examples, const AnswerVocab& answers);

}  // namespace uvlp
