#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mapo/language_model.hpp"
#include "mapo/persistence.hpp"
#include "mapo/text_metrics.hpp"
#include "mapo/warmup.hpp"

namespace mapo {

struct MetricReport {
  std::string dataset_name;
  TaskKind task = TaskKind::generation;
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double p10 = 0.0, p25 = 0.0, p75 = 0.0, p90 = 0.0;
  std::vector<Score> scores;
  /// Records whose generation failed; they are scored 0.
  std::size_t failures = 0;
};

/// Linear interpolation between order statistics (position q * (n - 1)).
double quantile(std::span<const double> sorted, double q);

MetricReport summarize_scores(std::string dataset_name, TaskKind task, std::vector<Score> scores);

struct EvalRecord {
  std::string prompt;
  std::string reference;
};

MetricReport evaluate_prompts(const PolicyHandle& target, std::span<const EvalRecord> records, TaskKind task,
                              const GenerationParams& params, std::string dataset_name = "");

struct ImprovementRow {
  std::string dataset_name;
  TaskKind task = TaskKind::generation;
  double baseline = 0.0;
  double treatment = 0.0;
  double absolute_delta = 0.0;
  /// Empty when the baseline is not positive.
  std::optional<double> relative_pct;
};

/// Compares means; throws std::invalid_argument when dataset or task differ.
ImprovementRow compare_runs(const MetricReport& baseline, const MetricReport& treatment);

double mean_normalized_edit_distance(std::span<const PromptPair> pairs, const EditDistanceConfig& config = {});

using WordProportions = std::vector<std::pair<std::string, double>>;

struct WordFrequencyReport {
  WordProportions original;
  WordProportions optimized;
};

/// Instruction words dropped before counting prompt vocabulary.
const std::set<std::string>& instruction_stoplist();

/// Top-k words by count (ties: alphabetical) with their share of the
/// corpus tokens that survive the stoplist.
WordProportions word_frequencies(std::span<const std::string> corpus, const std::set<std::string>& stoplist,
                                 std::size_t top_k);
WordFrequencyReport word_frequency_report(std::span<const std::string> originals,
                                          std::span<const std::string> optimized,
                                          const std::set<std::string>& stoplist, std::size_t top_k);

struct TTestResult {
  double t = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;
};

/// Two-sided paired t-test on treatment[i] - baseline[i].
TTestResult paired_t_test(std::span<const double> baseline, std::span<const double> treatment);

inline constexpr std::string_view kReportCsvHeader = "dataset,task,n,mean,median,p10,p25,p75,p90";
inline constexpr std::string_view kRawScoresCsvHeader = "dataset,record_index,score";
inline constexpr std::string_view kImprovementCsvHeader =
    "dataset,task,baseline,treatment,absolute_delta,relative_pct";

std::string report_csv(std::span<const MetricReport> reports);
std::string raw_scores_csv(std::span<const MetricReport> reports);
/// Undefined relative improvements are written as "-".
std::string improvement_csv(std::span<const ImprovementRow> rows);

}  // namespace mapo
