#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mapo {

/// Metric outputs. Always within [0, 1].
using Score = double;

enum class TaskKind { question_answering, classification, generation };

/// Wire names used in JSONL records: "qa", "classification", "generation".
std::string_view task_wire_name(TaskKind task);
std::optional<TaskKind> parse_task(std::string_view name);

/// Lowercased, punctuation-stripped, whitespace-split words of a string.
struct TokenizedText {
  std::vector<std::string> tokens;
  std::string source_text;

  static TokenizedText from(std::string_view text);
  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
std::size_t lcs_length(const TokenizedText& a, const TokenizedText& b);

/// F-measure weighting for ROUGE-L. beta = 1 gives the plain harmonic mean.
struct RougeConfig {
  double beta = 1.0;
};

Score rouge_l(const TokenizedText& candidate, const TokenizedText& reference,
              const RougeConfig& config = {});

/// Bag-of-tokens F1 with multiplicity (SQuAD-style token F1).
Score token_f1(const TokenizedText& prediction, const TokenizedText& gold);

Score exact_match_accuracy(std::string_view prediction, std::string_view gold);
Score exact_match_accuracy(std::span<const std::string> predictions,
                           std::span<const std::string> golds);

enum class EditDistanceDivisor { max_length, mean_length };

struct EditDistanceConfig {
  EditDistanceDivisor divisor = EditDistanceDivisor::max_length;
};

/// Levenshtein distance over unicode code points.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// Levenshtein distance scaled by the configured length divisor; 0 for two
/// empty strings. With the mean-length divisor the result is clamped to 1.
Score normalized_edit_distance(std::string_view a, std::string_view b,
                               const EditDistanceConfig& config = {});

/// question_answering -> token F1, classification -> exact match,
/// generation -> ROUGE-L.
Score score_for_task(TaskKind task, std::string_view prediction, std::string_view reference);

/// Decodes UTF-8 into code points; invalid bytes map to U+FFFD.
std::vector<char32_t> utf8_code_points(std::string_view text);

}  // namespace mapo
