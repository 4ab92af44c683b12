#include "uvlp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "uvlp/error.hpp"
#include "uvlp/io_util.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

using nlohmann::json;

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool is_slot(const std::string& word) { return word.size() > 2 && word.front() == '{' && word.back() == '}'; }

std::optional<std::size_t> object_slot(const std::string& word) {
  if (word.size() == 6 && word.rfind("{obj", 0) == 0 && word[5] == '}' && std::isdigit(static_cast<unsigned char>(word[4]))) {
    return static_cast<std::size_t>(word[4] - '0');
  }
  return std::nullopt;
}

std::size_t argmax(const double* begin, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(begin, begin + n) - begin);
}

struct SceneObject {
  std::size_t cls = 0;
  std::size_t color = 0;
  std::size_t size = 0;
  std::array<double, 5> box{};
  double cx() const { return 0.5 * (box[0] + box[2]); }
  double cy() const { return 0.5 * (box[1] + box[3]); }
};

// Relation of a (the earlier, left-most object) with respect to b.
std::string relation_between(const std::array<double, 5>& a, const std::array<double, 5>& b) {
  const double dx = 0.5 * (b[0] + b[2]) - 0.5 * (a[0] + a[2]);
  const double dy = 0.5 * (b[1] + b[3]) - 0.5 * (a[1] + a[3]);
  if (std::abs(dx) >= std::abs(dy)) return dx >= 0.0 ? "left_of" : "right_of";
  return dy > 0.0 ? "above" : "below";
}

std::array<double, 5> make_box(double w, double h, Rng& rng) {
  const double x1 = rng.uniform() * (1.0 - w);
  const double y1 = rng.uniform() * (1.0 - h);
  return {x1, y1, x1 + w, y1 + h, w * h};
}

}  // namespace

void validate_region(const Region& region) {
  double total = 0.0;
  for (double p : region.class_probs) {
    if (!(p >= 0.0)) throw ConfigError("region: negative class probability");
    total += p;
  }
  if (std::abs(total - 1.0) >= 1e-9) throw ConfigError("region: class probabilities do not sum to 1");
  const auto& g = region.geometry;
  for (double v : g) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("region: geometry outside [0, 1]");
  }
  if (!(g[2] > g[0] && g[3] > g[1])) throw ConfigError("region: degenerate box");
  if (std::abs(g[4] - (g[2] - g[0]) * (g[3] - g[1])) >= 1e-9) throw ConfigError("region: area inconsistent with box");
}

GrammarSpec default_grammar() {
  GrammarSpec g;
  g.classes = {"circle", "square",  "triangle", "star", "hexagon", "diamond",  "cross",   "heart",
               "ring",   "arrow",   "moon",     "cube", "cone",    "cylinder", "sphere",  "pyramid"};
  g.colors = {"red", "blue", "green", "yellow", "purple", "orange", "pink", "white"};
  g.sizes = {"small", "medium", "large"};
  g.relations = {{"left_of", "left of"}, {"right_of", "right of"}, {"above", "above"}, {"below", "below"}};
  g.caption_templates = {
      "a {obj0} {rel} a {obj1}",
      "a {obj0} {rel} a {obj1} and a {obj2}",
      "a {obj0} {rel} a {obj1} and a {obj2} and a {obj3}",
  };
  g.question_templates = {
      {"color", "what color is the {size} {class}"},
      {"shape", "what shape is the {size} {color} object"},
      {"size", "what size is the {color} {class}"},
      {"count", "how many objects are there"},
      {"exists", "is there a {color} {class}"},
  };
  g.count_words = {"zero", "one", "two", "three", "four", "five"};
  return g;
}

std::string grammar_to_json(const GrammarSpec& spec) {
  json j;
  j["classes"] = spec.classes;
  j["colors"] = spec.colors;
  j["sizes"] = spec.sizes;
  j["relations"] = json::array();
  for (const auto& r : spec.relations) j["relations"].push_back({{"name", r.name}, {"phrase", r.phrase}});
  j["caption_templates"] = spec.caption_templates;
  j["question_templates"] = json::array();
  for (const auto& q : spec.question_templates) j["question_templates"].push_back({{"kind", q.kind}, {"text", q.text}});
  j["count_words"] = spec.count_words;
  j["yes"] = spec.yes;
  j["no"] = spec.no;
  j["feature_dim"] = spec.feature_dim;
  j["class_logit_scale"] = spec.class_logit_scale;
  j["min_objects"] = spec.min_objects;
  j["max_objects"] = spec.max_objects;
  return j.dump(2);
}

GrammarSpec grammar_from_json(const std::string& text) {
  GrammarSpec g = default_grammar();
  try {
    const json j = json::parse(text);
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    read("classes", g.classes);
    read("colors", g.colors);
    read("sizes", g.sizes);
    if (j.contains("relations")) {
      g.relations.clear();
      for (const auto& r : j.at("relations")) g.relations.push_back({r.at("name"), r.at("phrase")});
    }
    read("caption_templates", g.caption_templates);
    if (j.contains("question_templates")) {
      g.question_templates.clear();
      for (const auto& q : j.at("question_templates")) g.question_templates.push_back({q.at("kind"), q.at("text")});
    }
    read("count_words", g.count_words);
    read("yes", g.yes);
    read("no", g.no);
    read("feature_dim", g.feature_dim);
    read("class_logit_scale", g.class_logit_scale);
    read("min_objects", g.min_objects);
    read("max_objects", g.max_objects);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grammar: ") + e.what());
  }
  validate_grammar(g);
  return g;
}

GrammarSpec load_grammar(const std::filesystem::path& path) { return grammar_from_json(read_text_file(path)); }

void validate_grammar(const GrammarSpec& spec) {
  if (spec.classes.empty() || spec.colors.empty() || spec.sizes.empty()) {
    throw ConfigError("grammar: classes, colors and sizes must be non-empty");
  }
  for (const auto* list : {&spec.classes, &spec.colors, &spec.sizes, &spec.count_words}) {
    for (const std::string& w : *list) {
      if (split_words(w).size() != 1 || is_slot(w)) throw ConfigError("grammar: '" + w + "' must be a single word");
    }
  }
  if (spec.min_objects < 2 || spec.max_objects < spec.min_objects) {
    throw ConfigError("grammar: need 2 <= min_objects <= max_objects");
  }
  if (spec.count_words.size() <= spec.max_objects) throw ConfigError("grammar: count_words must cover max_objects");
  if (spec.feature_dim < spec.classes.size() + spec.colors.size() + spec.sizes.size()) {
    throw ConfigError("grammar: feature_dim smaller than the class and attribute one-hots");
  }
  std::set<std::string> relation_names;
  for (const auto& r : spec.relations) {
    static const std::set<std::string> known = {"left_of", "right_of", "above", "below"};
    if (!known.count(r.name)) throw ConfigError("grammar: unknown relation '" + r.name + "'");
    if (split_words(r.phrase).empty()) throw ConfigError("grammar: relation '" + r.name + "' has no phrase");
    relation_names.insert(r.name);
  }
  for (const char* needed : {"left_of", "right_of", "above", "below"}) {
    if (!relation_names.count(needed)) throw ConfigError(std::string("grammar: relation '") + needed + "' missing");
  }
  std::set<std::size_t> counts;
  for (const std::string& t : spec.caption_templates) {
    std::size_t highest = 0;
    bool any = false;
    for (const std::string& w : split_words(t)) {
      if (!is_slot(w)) continue;
      if (w == "{rel}") continue;
      const auto slot = object_slot(w);
      if (!slot) throw ConfigError("grammar: caption template uses undeclared slot " + w);
      highest = std::max(highest, *slot);
      any = true;
    }
    if (!any) throw ConfigError("grammar: caption template without objects: " + t);
    counts.insert(highest + 1);
  }
  for (std::size_t n = spec.min_objects; n <= spec.max_objects; ++n) {
    if (!counts.count(n)) throw ConfigError("grammar: no caption template for " + std::to_string(n) + " objects");
  }
  for (const auto& q : spec.question_templates) {
    static const std::set<std::string> kinds = {"color", "shape", "size", "count", "exists"};
    if (!kinds.count(q.kind)) throw ConfigError("grammar: unknown question kind '" + q.kind + "'");
    for (const std::string& w : split_words(q.text)) {
      if (is_slot(w) && w != "{size}" && w != "{color}" && w != "{class}") {
        throw ConfigError("grammar: question template uses undeclared slot " + w);
      }
    }
  }
}

Vocab vocab_from_grammar(const GrammarSpec& spec) {
  std::set<std::string> words;
  auto add_text = [&](const std::string& text) {
    for (const std::string& w : split_words(text)) {
      if (!is_slot(w)) words.insert(w);
    }
  };
  for (const auto* list : {&spec.classes, &spec.colors, &spec.sizes, &spec.count_words}) {
    words.insert(list->begin(), list->end());
  }
  for (const auto& r : spec.relations) add_text(r.phrase);
  for (const auto& t : spec.caption_templates) add_text(t);
  for (const auto& q : spec.question_templates) add_text(q.text);
  words.insert(spec.yes);
  words.insert(spec.no);
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

SceneGenerator::SceneGenerator(GrammarSpec spec) : spec_(std::move(spec)) {
  validate_grammar(spec_);
  vocab_ = vocab_from_grammar(spec_);
}

SceneExample SceneGenerator::generate(std::uint64_t seed, std::size_t regions, double noise) const {
  if (regions < spec_.min_objects) {
    throw ConfigError("generate_scene: " + std::to_string(regions) + " regions cannot hold " +
                      std::to_string(spec_.min_objects) + " objects");
  }
  Rng rng(seed);
  const std::size_t num_classes = spec_.classes.size();
  const std::size_t num_colors = spec_.colors.size();
  const std::size_t num_sizes = spec_.sizes.size();
  const std::size_t hi = std::min(spec_.max_objects, regions);
  const std::size_t lo = std::min(spec_.min_objects, hi);
  const std::size_t object_count = lo + rng.below(hi - lo + 1);
  if (object_count > num_classes) throw ConfigError("generate_scene: more objects than classes");

  // Distinct classes keep every "the <size> <class>" reference unique.
  std::vector<std::size_t> class_pool(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) class_pool[i] = i;
  std::vector<SceneObject> objects(object_count);
  for (std::size_t i = 0; i < object_count; ++i) {
    const std::size_t j = i + rng.below(num_classes - i);
    std::swap(class_pool[i], class_pool[j]);
    objects[i].cls = class_pool[i];
    objects[i].color = rng.below(num_colors);
    objects[i].size = rng.below(num_sizes);
  }
  for (std::size_t i = 0; i < object_count; ++i) {
    const double base = num_sizes == 1 ? 0.25 : 0.12 + 0.22 * static_cast<double>(objects[i].size) /
                                                             static_cast<double>(num_sizes - 1);
    for (int attempt = 0;; ++attempt) {
      const double w = base * (0.9 + 0.2 * rng.uniform());
      const double h = base * (0.9 + 0.2 * rng.uniform());
      objects[i].box = make_box(w, h, rng);
      bool separated = true;
      for (std::size_t j = 0; j < i && attempt < 64; ++j) {
        separated = separated && std::abs(objects[i].cx() - objects[j].cx()) > 0.05 &&
                    std::abs(objects[i].cy() - objects[j].cy()) > 0.02;
      }
      if (separated || attempt >= 64) break;
    }
  }

  auto make_region = [&](std::size_t cls, std::optional<std::pair<std::size_t, std::size_t>> attributes,
                         const std::array<double, 5>& box) {
    Region r;
    r.features.assign(spec_.feature_dim, 0.0);
    r.features[cls] = 1.0;
    if (attributes) {
      r.features[num_classes + attributes->first] = 1.0;
      r.features[num_classes + num_colors + attributes->second] = 1.0;
    }
    for (double& f : r.features) f += noise * rng.normal();
    std::vector<double> logits(num_classes, 0.0);
    logits[cls] = spec_.class_logit_scale;
    for (double& l : logits) l += noise * rng.normal();
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    r.class_probs.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      r.class_probs[c] = std::exp(logits[c] - peak);
      total += r.class_probs[c];
    }
    for (double& p : r.class_probs) p /= total;
    r.geometry = box;
    return r;
  };

  SceneExample scene;
  scene.scene_id = seed;
  for (const SceneObject& o : objects) scene.regions.push_back(make_region(o.cls, std::pair{o.color, o.size}, o.box));
  for (std::size_t i = object_count; i < regions; ++i) {
    const std::size_t cls = rng.below(num_classes);
    const double w = 0.03 + 0.07 * rng.uniform();
    const double h = 0.03 + 0.07 * rng.uniform();
    const auto box = make_box(w, h, rng);
    scene.regions.push_back(make_region(cls, std::nullopt, box));
  }
  for (std::size_t i = regions; i-- > 1;) {
    std::swap(scene.regions[i], scene.regions[rng.below(i + 1)]);
  }

  // Caption: objects in left-to-right order.
  std::vector<std::size_t> order(object_count);
  for (std::size_t i = 0; i < object_count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return objects[a].cx() < objects[b].cx(); });
  std::vector<const std::string*> templates;
  for (const std::string& t : spec_.caption_templates) {
    std::size_t highest = 0;
    for (const std::string& w : split_words(t)) {
      if (auto s = object_slot(w)) highest = std::max(highest, *s);
    }
    if (highest + 1 == object_count) templates.push_back(&t);
  }
  const std::string& chosen = *templates[templates.size() == 1 ? 0 : rng.below(templates.size())];
  const std::string rel = relation_between(objects[order[0]].box, objects[order[1]].box);
  const auto rel_it = std::find_if(spec_.relations.begin(), spec_.relations.end(),
                                   [&](const RelationSpec& r) { return r.name == rel; });
  for (const std::string& w : split_words(chosen)) {
    if (auto slot = object_slot(w)) {
      const SceneObject& o = objects[order[*slot]];
      scene.caption.push_back(vocab_.id(spec_.sizes[o.size]));
      scene.caption.push_back(vocab_.id(spec_.colors[o.color]));
      scene.caption.push_back(vocab_.id(spec_.classes[o.cls]));
    } else if (w == "{rel}") {
      for (const std::string& p : split_words(rel_it->phrase)) scene.caption.push_back(vocab_.id(p));
    } else {
      scene.caption.push_back(vocab_.id(w));
    }
  }

  auto realize = [&](const std::string& text, std::size_t cls, std::size_t color, std::size_t size) {
    std::vector<TokenId> ids;
    for (const std::string& w : split_words(text)) {
      if (w == "{size}") ids.push_back(vocab_.id(spec_.sizes[size]));
      else if (w == "{color}") ids.push_back(vocab_.id(spec_.colors[color]));
      else if (w == "{class}") ids.push_back(vocab_.id(spec_.classes[cls]));
      else ids.push_back(vocab_.id(w));
    }
    return ids;
  };
  for (const QuestionTemplate& q : spec_.question_templates) {
    QaPair pair;
    if (q.kind == "color" || q.kind == "size") {
      const SceneObject& o = objects[rng.below(object_count)];
      pair.question = realize(q.text, o.cls, o.color, o.size);
      pair.answer = vocab_.id(q.kind == "color" ? spec_.colors[o.color] : spec_.sizes[o.size]);
    } else if (q.kind == "shape") {
      std::vector<std::size_t> unique;
      for (std::size_t i = 0; i < object_count; ++i) {
        std::size_t same = 0;
        for (const SceneObject& o : objects) same += o.color == objects[i].color && o.size == objects[i].size;
        if (same == 1) unique.push_back(i);
      }
      if (unique.empty()) continue;
      const SceneObject& o = objects[unique[rng.below(unique.size())]];
      pair.question = realize(q.text, o.cls, o.color, o.size);
      pair.answer = vocab_.id(spec_.classes[o.cls]);
    } else if (q.kind == "count") {
      pair.question = realize(q.text, 0, 0, 0);
      pair.answer = vocab_.id(spec_.count_words[object_count]);
    } else {
      const bool present = rng.uniform() < 0.5;
      std::size_t cls = 0;
      std::size_t color = 0;
      if (present) {
        const SceneObject& o = objects[rng.below(object_count)];
        cls = o.cls;
        color = o.color;
      } else {
        for (int attempt = 0; attempt < 256; ++attempt) {
          cls = rng.below(num_classes);
          color = rng.below(num_colors);
          const bool clash = std::any_of(objects.begin(), objects.end(),
                                         [&](const SceneObject& o) { return o.cls == cls && o.color == color; });
          if (!clash) break;
        }
      }
      pair.question = realize(q.text, cls, color, 0);
      pair.answer = vocab_.id(present ? spec_.yes : spec_.no);
    }
    scene.qa.push_back(std::move(pair));
  }
  return scene;
}

SceneExample generate_scene(std::uint64_t seed, const GrammarSpec& spec, std::size_t regions, double noise) {
  return SceneGenerator(spec).generate(seed, regions, noise);
}

std::vector<SceneExample> generate_dataset(const SceneGenerator& generator, std::uint64_t seed,
                                           std::size_t count, std::size_t regions, double noise,
                                           std::uint64_t first_id) {
  std::vector<SceneExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneExample scene = generator.generate(splitmix64(seed) ^ splitmix64(first_id + i), regions, noise);
    scene.scene_id = first_id + i;
    out.push_back(std::move(scene));
  }
  return out;
}

bool caption_consistent(const SceneExample& scene, const GrammarSpec& spec, const Vocab& vocab) {
  const std::size_t nc = spec.classes.size();
  const std::size_t ncol = spec.colors.size();
  const std::size_t ns = spec.sizes.size();
  struct Seen {
    std::size_t cls, color, size;
    const Region* region;
  };
  std::vector<Seen> attributed;
  for (const Region& r : scene.regions) {
    if (r.features.size() < nc + ncol + ns) return false;
    const double* f = r.features.data();
    const std::size_t color = argmax(f + nc, ncol);
    if (f[nc + color] < 0.5) continue;
    attributed.push_back({argmax(f, nc), color, argmax(f + nc + ncol, ns), &r});
  }
  std::vector<std::string> words;
  for (TokenId id : scene.caption) words.push_back(vocab.token(id));

  auto index_in = [](const std::vector<std::string>& list, const std::string& w) -> std::optional<std::size_t> {
    const auto it = std::find(list.begin(), list.end(), w);
    if (it == list.end()) return std::nullopt;
    return static_cast<std::size_t>(it - list.begin());
  };

  for (const std::string& tmpl : spec.caption_templates) {
    const std::vector<std::string> parts = split_words(tmpl);
    std::map<std::size_t, const Seen*> mentions;
    std::optional<std::string> relation;
    std::size_t pos = 0;
    bool ok = true;
    for (const std::string& part : parts) {
      if (!ok) break;
      if (auto slot = object_slot(part)) {
        if (pos + 3 > words.size()) { ok = false; break; }
        const auto size = index_in(spec.sizes, words[pos]);
        const auto color = index_in(spec.colors, words[pos + 1]);
        const auto cls = index_in(spec.classes, words[pos + 2]);
        pos += 3;
        const auto hit = std::find_if(attributed.begin(), attributed.end(), [&](const Seen& s) {
          return size && color && cls && s.size == *size && s.color == *color && s.cls == *cls;
        });
        ok = hit != attributed.end();
        if (ok) mentions[*slot] = &*hit;
      } else if (part == "{rel}") {
        ok = false;
        for (const RelationSpec& r : spec.relations) {
          const auto phrase = split_words(r.phrase);
          if (pos + phrase.size() <= words.size() &&
              std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(pos))) {
            relation = r.name;
            pos += phrase.size();
            ok = true;
            break;
          }
        }
      } else {
        ok = pos < words.size() && words[pos] == part;
        ++pos;
      }
    }
    if (!ok || pos != words.size()) continue;
    if (mentions.size() != attributed.size()) continue;
    std::set<const Region*> distinct;
    for (const auto& [slot, seen] : mentions) distinct.insert(seen->region);
    if (distinct.size() != mentions.size()) continue;
    bool ordered = true;
    for (std::size_t i = 1; i < mentions.size(); ++i) {
      const auto& a = mentions.at(i - 1)->region->geometry;
      const auto& b = mentions.at(i)->region->geometry;
      ordered = ordered && (a[0] + a[2]) <= (b[0] + b[2]);
    }
    if (!ordered) continue;
    if (relation && mentions.count(0) && mentions.count(1) &&
        relation_between(mentions.at(0)->region->geometry, mentions.at(1)->region->geometry) != *relation) {
      continue;
    }
    return true;
  }
  return false;
}

std::string scene_to_json_line(const SceneExample& scene) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["regions"] = json::array();
  for (const Region& r : scene.regions) {
    j["regions"].push_back({{"features", r.features}, {"class_probs", r.class_probs}, {"geometry", r.geometry}});
  }
  j["caption"] = scene.caption;
  j["qa"] = json::array();
  for (const QaPair& q : scene.qa) {
    j["qa"].push_back({{"question", q.question}, {"answer", q.answer}, {"soft_label", q.soft_label}});
  }
  return j.dump();
}

SceneExample scene_from_json_line(const std::string& line, std::size_t line_number) {
  try {
    const json j = json::parse(line);
    SceneExample scene;
    j.at("scene_id").get_to(scene.scene_id);
    for (const auto& r : j.at("regions")) {
      Region region;
      r.at("features").get_to(region.features);
      r.at("class_probs").get_to(region.class_probs);
      r.at("geometry").get_to(region.geometry);
      scene.regions.push_back(std::move(region));
    }
    j.at("caption").get_to(scene.caption);
    for (const auto& q : j.at("qa")) {
      QaPair pair;
      q.at("question").get_to(pair.question);
      q.at("answer").get_to(pair.answer);
      q.at("soft_label").get_to(pair.soft_label);
      scene.qa.push_back(std::move(pair));
    }
    return scene;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed dataset record: ") + e.what(), line_number);
  }
}

void write_dataset(const std::vector<SceneExample>& examples, const std::filesystem::path& path) {
  std::string out;
  for (const SceneExample& s : examples) {
    out += scene_to_json_line(s);
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<SceneExample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  std::vector<SceneExample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(scene_from_json_line(line, number));
  }
  return out;
}

std::optional<std::size_t> AnswerVocab::index_of(TokenId word) const {
  const auto it = std::find(answers.begin(), answers.end(), word);
  if (it == answers.end()) return std::nullopt;
  return static_cast<std::size_t>(it - answers.begin());
}

AnswerVocab build_answer_vocab(std::vector<SceneExample>& examples, std::size_t k, const Vocab& vocab) {
  if (k < 1) throw ConfigError("build_answer_vocab: k must be at least 1");
  std::map<TokenId, std::size_t> counts;
  for (const SceneExample& s : examples) {
    for (const QaPair& q : s.qa) ++counts[q.answer];
  }
  std::vector<std::pair<TokenId, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return vocab.token(a.first) < vocab.token(b.first);
  });
  AnswerVocab out;
  if (ranked.size() < k) {
    out.warning = "only " + std::to_string(ranked.size()) + " distinct answers for k=" + std::to_string(k);
  }
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.answers.push_back(ranked[i].first);
  assign_soft_labels(examples, out);
  return out;
}

void assign_soft_labels(std::vector<SceneExample>& examples, const AnswerVocab& answers) {
  for (SceneExample& s : examples) {
    for (QaPair& q : s.qa) {
      q.soft_label.assign(answers.size(), 0.0);
      if (auto idx = answers.index_of(q.answer)) q.soft_label[*idx] = 1.0;
    }
  }
}

}  // namespace uvlp
