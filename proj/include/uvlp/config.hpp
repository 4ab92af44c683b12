#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "uvlp/masking.hpp"
#include "uvlp/optim.hpp"

namespace uvlp {

enum class RegionPositional : std::uint8_t { kNone, kGlobal };

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 64;
  std::size_t regions = 8;
  std::size_t text_len = 20;
  std::size_t feature_dim = 32;
  std::size_t num_classes = 16;
  std::size_t num_answers = 32;
  std::size_t vqa_hidden = 128;
  double dropout = 0.1;
  double ln_eps = 1e-12;
  double init_std = 0.02;
  RegionPositional region_positional = RegionPositional::kNone;
  /// Feed C_i through the class branch of the region embedding.
  bool class_probs_as_input = true;
  /// Masked region classification head (ablation arm; excludes class input).
  bool region_pretext = false;

  std::size_t branch_width() const noexcept { return hidden / 2; }
  std::size_t head_dim() const noexcept { return hidden / heads; }
  std::size_t sequence_length() const noexcept { return regions + text_len + 3; }
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Names of the architecture fields on which two configs disagree.
std::vector<std::string> architecture_mismatch(const ModelConfig& a, const ModelConfig& b);

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  std::size_t batch = 16;
  std::size_t steps = 500;
  double lambda = 0.75;
  CorruptionConfig corruption;
  double clip_norm = 1.0;
  double pretext_rate = 0.15;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Named presets: "desk" (the defaults), "bert-base" (full-size backbone),
/// and the full-scale training rows "cc", "coco", "vqa2", "flickr30k".
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace uvlp
