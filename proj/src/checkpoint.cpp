#include "uvlp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <nlohmann/json.hpp>

#include "uvlp/error.hpp"
#include "uvlp/io_util.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

namespace {

constexpr std::string_view kMagic = "UVLP1\n";

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void append_double(std::string& out, double x) { append_u64(out, std::bit_cast<std::uint64_t>(x)); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = ck.config;
  manifest["step"] = ck.step;
  manifest["vocab"] = ck.vocab_tokens;
  manifest["answers"] = ck.answers;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  const auto named = ck.weights.named();
  for (const auto& [name, t] : named) {
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"size", t->size()}});
    offset += t->size();
  }
  manifest["tensors"] = tensors;
  const std::string text = manifest.dump();

  std::string out(kMagic);
  append_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& [name, t] : named) {
    for (double v : t->values()) append_double(out, v);
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8) throw CheckpointTruncatedError("checkpoint shorter than its header");
  if (bytes.substr(0, kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint: bad magic");
  const std::uint64_t len = read_u64(bytes.substr(kMagic.size(), 8));
  const std::size_t body = kMagic.size() + 8;
  if (bytes.size() - body < len) throw CheckpointTruncatedError("checkpoint manifest is truncated");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(body, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.config = manifest.at("config").get<ModelConfig>();
    ck.step = manifest.at("step").get<std::size_t>();
    ck.vocab_tokens = manifest.at("vocab").get<std::vector<std::string>>();
    ck.answers = manifest.at("answers").get<std::vector<TokenId>>();

    Rng rng(0);
    ck.weights = init_weights(ck.config, rng);
    auto named = ck.weights.named();
    const auto& entries = manifest.at("tensors");
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& e : entries) by_name[e.at("name").get<std::string>()] = &e;
    if (by_name.size() != named.size()) {
      throw CheckpointShapeError("checkpoint lists " + std::to_string(by_name.size()) + " tensors, config implies " +
                                 std::to_string(named.size()));
    }
    std::size_t total = 0;
    for (const auto& p : named) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw CheckpointShapeError("checkpoint is missing tensor " + p.name);
      const Shape shape = it->second->at("shape").get<Shape>();
      if (shape != p.tensor->shape()) {
        throw CheckpointShapeError("tensor " + p.name + " has shape " + shape_string(shape) + ", expected " +
                                   shape_string(p.tensor->shape()));
      }
      if (it->second->at("size").get<std::size_t>() != p.tensor->size()) {
        throw CheckpointShapeError("tensor " + p.name + " has inconsistent size");
      }
      total += p.tensor->size();
    }
    const std::string_view payload = bytes.substr(body + len);
    if (payload.size() < total * 8) {
      throw CheckpointTruncatedError("checkpoint payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                     std::to_string(total * 8));
    }
    if (payload.size() > total * 8) throw CheckpointError("checkpoint has trailing bytes after its payload");
    for (const auto& p : named) {
      const std::size_t offset = by_name[p.name]->at("offset").get<std::size_t>();
      if (offset + p.tensor->size() > total) throw CheckpointShapeError("tensor " + p.name + " offset out of range");
      auto values = p.tensor->values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<double>(read_u64(payload.substr((offset + i) * 8, 8)));
      }
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const Error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(bytes);
}

}  // namespace uvlp
