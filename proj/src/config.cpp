#include "uvlp/config.hpp"

#include "uvlp/error.hpp"

namespace uvlp {

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) throw ConfigError("hidden size must be divisible by heads");
  if (hidden % 2 != 0) throw ConfigError("hidden size must be even (class/geometry branches split it)");
  if (ffn < hidden) throw ConfigError("ffn width must be at least the hidden size");
  if (vocab_size <= 6) throw ConfigError("vocab_size must cover the reserved tokens and at least one word");
  if (regions < 1 || text_len < 1) throw ConfigError("regions and text_len must be positive");
  if (sequence_length() > max_positions) {
    throw ConfigError("sequence length " + std::to_string(sequence_length()) + " exceeds max_positions " +
                      std::to_string(max_positions));
  }
  if (feature_dim == 0 || num_classes == 0 || num_answers == 0 || vqa_hidden == 0) {
    throw ConfigError("feature, class, answer and VQA hidden sizes must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (region_pretext && class_probs_as_input) {
    throw ConfigError("region_pretext and class_probs_as_input are mutually exclusive arms");
  }
}

std::vector<std::string> architecture_mismatch(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> out;
#define UVLP_CHECK_FIELD(f) \
  if (a.f != b.f) out.emplace_back(#f)
  UVLP_CHECK_FIELD(layers);
  UVLP_CHECK_FIELD(hidden);
  UVLP_CHECK_FIELD(heads);
  UVLP_CHECK_FIELD(ffn);
  UVLP_CHECK_FIELD(vocab_size);
  UVLP_CHECK_FIELD(max_positions);
  UVLP_CHECK_FIELD(regions);
  UVLP_CHECK_FIELD(text_len);
  UVLP_CHECK_FIELD(feature_dim);
  UVLP_CHECK_FIELD(num_classes);
  UVLP_CHECK_FIELD(region_positional);
  UVLP_CHECK_FIELD(class_probs_as_input);
#undef UVLP_CHECK_FIELD
  return out;
}

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "bert-base" || name == "cc" || name == "coco" || name == "vqa2" || name == "flickr30k") {
    c.model.layers = 12;
    c.model.hidden = 768;
    c.model.heads = 12;
    c.model.ffn = 3072;
    c.model.max_positions = 512;
    c.model.regions = 100;
    c.model.text_len = 20;
    c.model.feature_dim = 2048;
    c.model.num_classes = 1600;
    c.model.num_answers = 3129;
    c.model.vqa_hidden = 1536;
  }
  if (name == "bert-base") return c;
  // Per-GPU batch 64 with the learning rate scaled by the GPU count.
  if (name == "cc") {
    c.batch = 64 * 8;
    c.adam.lr = 1e-4 * 8;
    c.lambda = 0.75;
  } else if (name == "coco" || name == "flickr30k") {
    c.batch = 64 * 8;
    c.adam.lr = 3e-5 * 8;
    c.lambda = 1.0;
  } else if (name == "vqa2") {
    c.batch = 64 * 2;
    c.adam.lr = 2e-5 * 2;
    c.lambda = 0.0;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"desk", "bert-base", "cc", "coco", "vqa2", "flickr30k"}; }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"layers", c.layers},
       {"hidden", c.hidden},
       {"heads", c.heads},
       {"ffn", c.ffn},
       {"vocab_size", c.vocab_size},
       {"max_positions", c.max_positions},
       {"regions", c.regions},
       {"text_len", c.text_len},
       {"feature_dim", c.feature_dim},
       {"num_classes", c.num_classes},
       {"num_answers", c.num_answers},
       {"vqa_hidden", c.vqa_hidden},
       {"dropout", c.dropout},
       {"ln_eps", c.ln_eps},
       {"init_std", c.init_std},
       {"region_positional", c.region_positional == RegionPositional::kGlobal ? "global" : "none"},
       {"class_probs_as_input", c.class_probs_as_input},
       {"region_pretext", c.region_pretext}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("layers", c.layers);
  read("hidden", c.hidden);
  read("heads", c.heads);
  read("ffn", c.ffn);
  read("vocab_size", c.vocab_size);
  read("max_positions", c.max_positions);
  read("regions", c.regions);
  read("text_len", c.text_len);
  read("feature_dim", c.feature_dim);
  read("num_classes", c.num_classes);
  read("num_answers", c.num_answers);
  read("vqa_hidden", c.vqa_hidden);
  read("dropout", c.dropout);
  read("ln_eps", c.ln_eps);
  read("init_std", c.init_std);
  if (j.contains("region_positional")) {
    const std::string v = j.at("region_positional");
    if (v == "global") c.region_positional = RegionPositional::kGlobal;
    else if (v == "none") c.region_positional = RegionPositional::kNone;
    else throw ConfigError("region_positional must be 'global' or 'none'");
  }
  read("class_probs_as_input", c.class_probs_as_input);
  read("region_pretext", c.region_pretext);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"lr", c.adam.lr},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"adam_eps", c.adam.eps},
       {"warmup", c.adam.warmup},
       {"batch", c.batch},
       {"steps", c.steps},
       {"lambda", c.lambda},
       {"mask_rate", c.corruption.rate},
       {"p_mask", c.corruption.p_mask},
       {"p_random", c.corruption.p_random},
       {"p_keep", c.corruption.p_keep},
       {"force_one_mask", c.corruption.force_one},
       {"clip_norm", c.clip_norm},
       {"pretext_rate", c.pretext_rate},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("model")) j.at("model").get_to(c.model);
  read("lr", c.adam.lr);
  read("beta1", c.adam.beta1);
  read("beta2", c.adam.beta2);
  read("adam_eps", c.adam.eps);
  read("warmup", c.adam.warmup);
  read("batch", c.batch);
  read("steps", c.steps);
  read("lambda", c.lambda);
  read("mask_rate", c.corruption.rate);
  read("p_mask", c.corruption.p_mask);
  read("p_random", c.corruption.p_random);
  read("p_keep", c.corruption.p_keep);
  read("force_one_mask", c.corruption.force_one);
  read("clip_norm", c.clip_norm);
  read("pretext_rate", c.pretext_rate);
  read("seed", c.seed);
  read("checkpoint_every", c.checkpoint_every);
}

}  // namespace uvlp
