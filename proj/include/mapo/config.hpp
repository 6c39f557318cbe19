#pragma once

#include <cstdint>
#include <string>

#include "mapo/language_model.hpp"
#include "mapo/persistence.hpp"
#include "mapo/rl_trainer.hpp"
#include "mapo/sft.hpp"
#include "mapo/transformer.hpp"
#include "mapo/warmup.hpp"

namespace mapo {

/// Where the oracle and target models live. "stub" selects the built-in
/// paraphraser, "hidden_template" the template-matching target; http(s)
/// URLs select a remote endpoint.
struct EndpointsConfig {
  std::string oracle = "stub";
  std::string target = "hidden_template";
  std::string target_template;
  double timeout_seconds = 60.0;
  int max_attempts = 3;
  std::size_t max_in_flight = 4;

  bool operator==(const EndpointsConfig&) const = default;
};

struct PathsConfig {
  std::string run_dir = "run";
  /// Input prompt JSONL: {"task", "dataset", "prompt", "reference"?}.
  std::string prompts;
  /// Optional general-task JSONL: {"text"}.
  std::string general;

  bool operator==(const PathsConfig&) const = default;
};

struct SeedsConfig {
  std::uint64_t warmup = 0, sft = 0, reward = 0, rl = 0, eval = 0;

  bool operator==(const SeedsConfig&) const = default;
};

struct WarmupStageConfig {
  WarmupConfig builder;
  double train_fraction = 1.0;
  double validation_fraction = 0.0;
  double test_fraction = 0.0;

  bool operator==(const WarmupStageConfig&) const = default;
};

struct SftStageConfig {
  SftConfig trainer;
  ModelConfig model;
  /// Save epoch_<n> every this many epochs; the final epoch is always saved.
  std::size_t checkpoint_every = 0;

  bool operator==(const SftStageConfig&) const = default;
};

struct RewardStageConfig {
  SftConfig trainer;

  bool operator==(const RewardStageConfig&) const = default;
};

struct RlStageConfig {
  RlConfig trainer;
  double pretrain_fraction = 0.1;
  std::size_t checkpoint_every = 0;

  bool operator==(const RlStageConfig&) const = default;
};

struct EvalStageConfig {
  GenerationParams rewriter_params{.temperature = 0.0, .max_tokens = 32, .seed = 0};
  GenerationParams target_params{.temperature = 0.0, .max_tokens = 64, .seed = 0};
  /// Sampled responses per prompt for the KL-to-SFT estimate.
  std::size_t kl_samples = 4;
  std::size_t top_k_words = 3;

  bool operator==(const EvalStageConfig&) const = default;
};

struct PipelineConfig {
  PathsConfig paths;
  EndpointsConfig endpoints;
  SeedsConfig seeds;
  WarmupStageConfig warmup;
  SftStageConfig sft;
  RewardStageConfig reward;
  RlStageConfig rl;
  EvalStageConfig eval;

  /// Defaults with the hyperparameter table applied (lambda_pos 2.0,
  /// lambda_neg 1.8 among them).
  PipelineConfig();

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  /// Sets every stage seed.
  void set_seed(std::uint64_t seed);
  bool operator==(const PipelineConfig&) const = default;
};

/// INI-style document with [section] headers and "key = value" lines.
/// Unknown sections or keys and malformed values raise ConfigError.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const fs::path& path);
/// Every key, in a fixed order, with values that parse back exactly.
std::string serialize_config(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

}  // namespace mapo
