#include "mapo/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "mapo/errors.hpp"

namespace mapo {

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MetricReport summarize_scores(std::string dataset_name, TaskKind task, std::vector<Score> scores) {
  if (scores.empty()) throw std::invalid_argument("summarize_scores: no scores");
  MetricReport r;
  r.dataset_name = std::move(dataset_name);
  r.task = task;
  r.n = scores.size();
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  // Summing in sorted order keeps the mean independent of record order.
  r.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(r.n);
  r.mean = std::clamp(r.mean, sorted.front(), sorted.back());
  r.median = quantile(sorted, 0.5);
  r.p10 = quantile(sorted, 0.10);
  r.p25 = quantile(sorted, 0.25);
  r.p75 = quantile(sorted, 0.75);
  r.p90 = quantile(sorted, 0.90);
  r.scores = std::move(scores);
  return r;
}

MetricReport evaluate_prompts(const PolicyHandle& target, std::span<const EvalRecord> records, TaskKind task,
                              const GenerationParams& params, std::string dataset_name) {
  if (records.empty()) throw std::invalid_argument("evaluate_prompts: no records");
  std::vector<Score> scores;
  std::size_t failures = 0;
  for (const auto& rec : records) {
    try {
      scores.push_back(score_for_task(task, generate_text(target, rec.prompt, params), rec.reference));
    } catch (const Error&) {
      scores.push_back(0.0);
      ++failures;
    }
  }
  auto report = summarize_scores(std::move(dataset_name), task, std::move(scores));
  report.failures = failures;
  return report;
}

ImprovementRow compare_runs(const MetricReport& baseline, const MetricReport& treatment) {
  if (baseline.dataset_name != treatment.dataset_name || baseline.task != treatment.task) {
    throw std::invalid_argument("compare_runs: reports describe different datasets (" + baseline.dataset_name +
                                " vs " + treatment.dataset_name + ")");
  }
  ImprovementRow row;
  row.dataset_name = baseline.dataset_name;
  row.task = baseline.task;
  row.baseline = baseline.mean;
  row.treatment = treatment.mean;
  row.absolute_delta = treatment.mean - baseline.mean;
  if (baseline.mean > 0.0) row.relative_pct = 100.0 * row.absolute_delta / baseline.mean;
  return row;
}

double mean_normalized_edit_distance(std::span<const PromptPair> pairs, const EditDistanceConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("mean_normalized_edit_distance: no pairs");
  double sum = 0.0;
  for (const auto& p : pairs) sum += normalized_edit_distance(p.original, p.optimized, config);
  return sum / static_cast<double>(pairs.size());
}

const std::set<std::string>& instruction_stoplist() {
  static const std::set<std::string> words{"sentence", "topics",    "subjects", "present",  "statement",
                                           "discussed", "mentioned", "included", "following"};
  return words;
}

WordProportions word_frequencies(std::span<const std::string> corpus, const std::set<std::string>& stoplist,
                                 std::size_t top_k) {
  if (top_k == 0) throw std::invalid_argument("word_frequencies: top_k must be >= 1");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& text : corpus) {
    for (auto& tok : TokenizedText::from(text).tokens) {
      if (stoplist.count(tok)) continue;
      ++counts[tok];
      ++total;
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  WordProportions out;
  for (std::size_t i = 0; i < std::min(top_k, ranked.size()); ++i) {
    out.emplace_back(ranked[i].first, static_cast<double>(ranked[i].second) / static_cast<double>(total));
  }
  return out;
}

WordFrequencyReport word_frequency_report(std::span<const std::string> originals,
                                          std::span<const std::string> optimized,
                                          const std::set<std::string>& stoplist, std::size_t top_k) {
  return {word_frequencies(originals, stoplist, top_k), word_frequencies(optimized, stoplist, top_k)};
}

TTestResult paired_t_test(std::span<const double> baseline, std::span<const double> treatment) {
  if (baseline.size() != treatment.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const std::size_t n = baseline.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = treatment[i] - baseline[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.degrees_of_freedom = static_cast<double>(n - 1);
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string report_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << kReportCsvHeader << '\n';
  for (const auto& r : reports) {
    os << r.dataset_name << ',' << task_wire_name(r.task) << ',' << r.n << ',' << num(r.mean) << ','
       << num(r.median) << ',' << num(r.p10) << ',' << num(r.p25) << ',' << num(r.p75) << ',' << num(r.p90) << '\n';
  }
  return os.str();
}

std::string raw_scores_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << kRawScoresCsvHeader << '\n';
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.scores.size(); ++i) os << r.dataset_name << ',' << i << ',' << num(r.scores[i]) << '\n';
  }
  return os.str();
}

std::string improvement_csv(std::span<const ImprovementRow> rows) {
  std::ostringstream os;
  os << kImprovementCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.dataset_name << ',' << task_wire_name(r.task) << ',' << num(r.baseline) << ',' << num(r.treatment) << ','
       << num(r.absolute_delta) << ',' << (r.relative_pct ? num(*r.relative_pct) : std::string("-")) << '\n';
  }
  return os.str();
}

}  // namespace mapo
