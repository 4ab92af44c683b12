#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uvlp/config.hpp"
#include "uvlp/vocab.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume or run inference: weights, architecture,
/// the word vocabulary and the answer classes.
struct Checkpoint {
  ModelConfig config;
  std::size_t step = 0;
  ModelWeights weights;
  std::vector<std::string> vocab_tokens;
  std::vector<TokenId> answers;
};

/// "UVLP1\n", u64 little-endian manifest length, JSON manifest, then the
/// little-endian doubles of every tensor in manifest order.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uvlp
