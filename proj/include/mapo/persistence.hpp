#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mapo/language_model.hpp"

namespace mapo {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, std::string_view bytes);

/// One JSON object per line; blank lines are skipped. Throws SchemaError
/// naming the line on malformed input.
std::vector<nlohmann::json> read_jsonl(const fs::path& path);
std::string to_jsonl(const std::vector<nlohmann::json>& records);
void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records);

/// Checkpoint directory: parameters.bin (raw little-endian doubles after a
/// magic/count header), model.json (model config + vocabulary) and
/// manifest.json ({"<counter_key>": n, "loss", "seed", "config_hash"}).
struct CheckpointInfo {
  std::string counter_key = "epoch";
  std::size_t counter = 0;
  double loss = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

void save_checkpoint(const fs::path& dir, const CausalLM& model, const CheckpointInfo& info);
CausalLM load_checkpoint(const fs::path& dir, CheckpointInfo* info = nullptr);

std::string serialize_parameters(std::span<const double> params);
std::vector<double> deserialize_parameters(std::string_view bytes);

}  // namespace mapo
