#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mapo/language_model.hpp"
#include "mapo/persistence.hpp"
#include "mapo/text_metrics.hpp"

namespace mapo {

struct ScoredCandidate {
  std::string prompt_text;
  std::string generated_output;
  Score score = 0.0;
  /// Set when generation failed; score is then 0.
  std::optional<std::string> error;
};

/// (original P, optimized P_o). score_optimized >= score_original.
struct PromptPair {
  std::string original;
  std::string optimized;
  TaskKind task = TaskKind::generation;
  std::string dataset_name;
  std::string reference_output;
  Score score_original = 0.0;
  Score score_optimized = 0.0;

  bool operator==(const PromptPair&) const = default;
};

/// Candidates plus the original, ascending by score.
struct RankingSequence {
  std::vector<ScoredCandidate> entries;
  std::size_t original_index = 0;
  /// Number of candidates excluding the original.
  std::size_t k = 0;

  const ScoredCandidate& original() const { return entries.at(original_index); }
};

/// An input prompt for warm-up construction. Without a reference, the
/// oracle's answer to the original prompt stands in for ground truth.
struct PromptRecord {
  TaskKind task = TaskKind::generation;
  std::string dataset;
  std::string prompt;
  std::optional<std::string> reference;
};

struct WarmupConfig {
  std::size_t num_candidates = 16;
  /// Extra paraphrase draws allowed for replacing duplicates.
  std::size_t retry_budget = 16;
  /// Keep only this many lowest and highest entries (plus the original) of
  /// each ranking sequence; 0 keeps all.
  std::size_t ranking_band = 0;
  GenerationParams oracle_params{.temperature = 0.0, .max_tokens = 64, .seed = 0};
  GenerationParams target_params{.temperature = 0.0, .max_tokens = 64, .seed = 0};
  std::uint64_t seed = 0;

  bool operator==(const WarmupConfig&) const = default;
};

struct WarmupRecord {
  PromptPair pair;
  RankingSequence ranking;
};

std::vector<std::string> generate_candidates(const PolicyHandle& oracle, const std::string& original, std::size_t n,
                                             std::uint64_t seed, std::size_t retry_budget,
                                             const GenerationParams& params = {});

std::vector<ScoredCandidate> score_candidates(const PolicyHandle& target, std::span<const std::string> candidates,
                                              TaskKind task, const std::string& reference,
                                              const GenerationParams& params);

/// Highest-scoring candidate (ties: shorter text, then lexicographically
/// smaller); falls back to the identity pair unless it beats the original.
PromptPair search_optimal(const std::string& original, std::span<const ScoredCandidate> scored,
                          Score score_original);

/// Stable ascending sort of the candidates with the original inserted after
/// every candidate of equal score.
RankingSequence build_ranking_sequence(const ScoredCandidate& original, std::span<const ScoredCandidate> scored);

/// Keeps the `band` lowest and `band` highest entries plus the original.
RankingSequence truncate_ranking_band(const RankingSequence& seq, std::size_t band);

struct RankingPair {
  ScoredCandidate winner;
  ScoredCandidate loser;
};

/// All (winner, loser) pairs with strictly higher winner score.
std::vector<RankingPair> enumerate_ranking_pairs(const RankingSequence& seq);

WarmupRecord build_warmup_record(const PolicyHandle& oracle, const PolicyHandle& target, const PromptRecord& input,
                                 const WarmupConfig& config, std::size_t record_index);

std::vector<WarmupRecord> build_warmup_dataset(const PolicyHandle& oracle, const PolicyHandle& target,
                                               std::span<const PromptRecord> inputs, const WarmupConfig& config);

nlohmann::json warmup_record_to_json(const PromptPair& pair, const RankingSequence& seq);
WarmupRecord warmup_record_from_json(const nlohmann::json& j);

struct RecordCounts {
  std::size_t records = 0;
  std::size_t ranking_pairs = 0;
};

/// Writes one JSON record per pair; pairs[i] and sequences[i] describe the
/// same original prompt.
RecordCounts emit_warmup_dataset(std::span<const PromptPair> pairs, std::span<const RankingSequence> sequences,
                                 const fs::path& path);
std::vector<WarmupRecord> load_warmup_dataset(const fs::path& path);

/// Ranking-pair JSONL {"x", "y_w", "y_l", "k"} for reward-model training.
std::size_t emit_ranking_pairs(std::span<const RankingSequence> sequences, std::span<const PromptPair> pairs,
                               const fs::path& path);

/// Split sizes proportional to `ratios` (train/val/test); any rounding
/// remainder goes to train.
std::vector<std::size_t> split_counts(std::size_t n, std::span<const double> ratios);

std::vector<PromptRecord> load_prompt_records(const fs::path& path);

}  // namespace mapo
