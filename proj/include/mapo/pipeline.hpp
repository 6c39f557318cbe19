#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapo/config.hpp"
#include "mapo/eval_harness.hpp"
#include "mapo/persistence.hpp"
#include "mapo/reward_model.hpp"

namespace mapo {

inline constexpr const char* kStageOrder[] = {"warmup", "sft", "reward", "rl", "eval"};

struct StageRecord {
  std::string completed_at;
  std::uint64_t seed = 0;
  /// Run-relative path -> sha256 of the file.
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  nlohmann::json details = nlohmann::json::object();
};

/// run_dir/manifest.json. A stage record is added only after all of the
/// stage's outputs have been written.
struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, StageRecord> stages;

  bool has(const std::string& stage) const { return stages.count(stage) > 0; }
  /// Throws MissingUpstreamError naming the stage when it has no record.
  const StageRecord& require(const std::string& stage) const;
  /// Recomputes every output digest of `stage`; throws Error naming the
  /// first file that is missing or differs.
  void verify(const fs::path& run_dir, const std::string& stage) const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load_or_create(const fs::path& run_dir, const std::string& config_hash);
  void save(const fs::path& run_dir) const;
};

/// Digests of every regular file under `dir`, keyed relative to `run_dir`.
std::map<std::string, std::string> digest_tree(const fs::path& run_dir, const fs::path& dir);

/// Oracle and target text models named by the endpoints section.
std::shared_ptr<const TextModel> make_text_model(const std::string& spec, const EndpointsConfig& endpoints);

struct StageOptions {
  bool force = false;
};

/// Each command runs one stage under config.paths.run_dir and records it in
/// the manifest. A completed stage is refused unless options.force is set,
/// in which case it and every later stage are invalidated and rerun.
void cmd_warmup(const PipelineConfig& config, const StageOptions& options = {});
void cmd_sft(const PipelineConfig& config, const StageOptions& options = {});
void cmd_reward(const PipelineConfig& config, const StageOptions& options = {});
void cmd_rl(const PipelineConfig& config, const StageOptions& options = {});
void cmd_eval(const PipelineConfig& config, const StageOptions& options = {});
/// Rewrites one prompt with the newest RL checkpoint, or the SFT model when
/// RL has not run.
std::string cmd_optimize(const PipelineConfig& config, const std::string& prompt, TaskKind task);

/// Artifact locations inside a run directory.
struct RunLayout {
  fs::path root;

  fs::path warmup_split(const std::string& split) const { return root / "warmup" / ("warmup_" + split + ".jsonl"); }
  fs::path ranking_split(const std::string& split) const {
    return root / "warmup" / ("ranking_pairs_" + split + ".jsonl");
  }
  fs::path sft_dir() const { return root / "sft"; }
  fs::path reward_dir() const { return root / "reward"; }
  fs::path rl_dir() const { return root / "rl"; }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

/// Checkpoint directory a completed stage names as its final model.
fs::path final_checkpoint(const RunManifest& manifest, const fs::path& run_dir, const std::string& stage);

}  // namespace mapo
