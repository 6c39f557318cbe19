#include "mapo/persistence.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "mapo/errors.hpp"

namespace mapo {

namespace {
constexpr char kParamMagic[8] = {'M', 'A', 'P', 'O', 'P', 'A', 'R', '1'};
static_assert(std::endian::native == std::endian::little, "parameter blobs assume a little-endian host");
}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
  write_file_atomic(path, to_jsonl(records));
}

std::string serialize_parameters(std::span<const double> params) {
  std::string out(kParamMagic, sizeof(kParamMagic));
  const std::uint64_t n = params.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  out.append(reinterpret_cast<const char*>(params.data()), params.size_bytes());
  return out;
}

std::vector<double> deserialize_parameters(std::string_view bytes) {
  if (bytes.size() < sizeof(kParamMagic) + 8 || std::memcmp(bytes.data(), kParamMagic, sizeof(kParamMagic)) != 0) {
    throw SchemaError("parameter blob has a bad header");
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + sizeof(kParamMagic), sizeof(n));
  const std::size_t offset = sizeof(kParamMagic) + sizeof(n);
  if (bytes.size() != offset + n * sizeof(double)) throw SchemaError("parameter blob has the wrong length");
  std::vector<double> out(n);
  std::memcpy(out.data(), bytes.data() + offset, n * sizeof(double));
  return out;
}

void save_checkpoint(const fs::path& dir, const CausalLM& model, const CheckpointInfo& info) {
  fs::create_directories(dir);
  write_file_atomic(dir / "parameters.bin", serialize_parameters(model.parameters()));
  const nlohmann::json model_json = {{"config", model.network().config().to_json()},
                                     {"vocabulary", model.vocabulary().to_json()}};
  write_file_atomic(dir / "model.json", model_json.dump(1) + "\n");
  const nlohmann::json manifest = {{info.counter_key, info.counter},
                                   {"loss", info.loss},
                                   {"seed", info.seed},
                                   {"config_hash", info.config_hash}};
  write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

CausalLM load_checkpoint(const fs::path& dir, CheckpointInfo* info) {
  if (!fs::exists(dir / "parameters.bin")) throw Error("missing checkpoint at " + dir.string());
  const auto model_json = nlohmann::json::parse(read_file(dir / "model.json"));
  const auto config = ModelConfig::from_json(model_json.at("config"));
  auto vocab = std::make_shared<const Vocabulary>(Vocabulary::from_json(model_json.at("vocabulary")));
  CausalLM model(vocab, config, 0);
  const auto params = deserialize_parameters(read_file(dir / "parameters.bin"));
  if (params.size() != model.parameters().size()) throw SchemaError("checkpoint parameter count mismatch");
  std::copy(params.begin(), params.end(), model.parameters().begin());
  if (info) {
    const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    info->counter_key = manifest.contains("epoch") ? "epoch" : "step";
    info->counter = manifest.at(info->counter_key).get<std::size_t>();
    info->loss = manifest.at("loss").get<double>();
    info->seed = manifest.at("seed").get<std::uint64_t>();
    info->config_hash = manifest.at("config_hash").get<std::string>();
  }
  return model;
}

}  // namespace mapo
