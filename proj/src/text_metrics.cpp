#include "mapo/text_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace mapo {

std::string_view task_wire_name(TaskKind task) {
  switch (task) {
    case TaskKind::question_answering: return "qa";
    case TaskKind::classification: return "classification";
    case TaskKind::generation: return "generation";
  }
  throw std::logic_error("unknown TaskKind");
}

std::optional<TaskKind> parse_task(std::string_view name) {
  if (name == "qa" || name == "question_answering") return TaskKind::question_answering;
  if (name == "classification") return TaskKind::classification;
  if (name == "generation") return TaskKind::generation;
  return std::nullopt;
}

TokenizedText TokenizedText::from(std::string_view text) {
  TokenizedText out;
  out.source_text = std::string(text);
  std::string current;
  for (char ch : text) {
    const auto byte = static_cast<unsigned char>(ch);
    if (byte < 0x80 && std::isspace(byte)) {
      if (!current.empty()) out.tokens.push_back(std::move(current));
      current.clear();
    } else if (byte < 0x80 && std::ispunct(byte)) {
      continue;
    } else {
      current.push_back(byte < 0x80 ? static_cast<char>(std::tolower(byte)) : ch);
    }
  }
  if (!current.empty()) out.tokens.push_back(std::move(current));
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  // Two-row DP.
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t lcs_length(const TokenizedText& a, const TokenizedText& b) {
  return lcs_length(std::span<const std::string>(a.tokens), std::span<const std::string>(b.tokens));
}

namespace {

Score f_measure(double precision, double recall, double beta) {
  if (precision <= 0.0 || recall <= 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * precision * recall / (recall + b2 * precision);
}

std::string normalize_label(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t begin = 0, end = s.size();
  while (begin < end && is_space(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && is_space(static_cast<unsigned char>(s[end - 1]))) --end;
  std::string out(s.substr(begin, end - begin));
  for (char& c : out) {
    const auto byte = static_cast<unsigned char>(c);
    if (byte < 0x80) c = static_cast<char>(std::tolower(byte));
  }
  return out;
}

}  // namespace

Score rouge_l(const TokenizedText& candidate, const TokenizedText& reference,
              const RougeConfig& config) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  return f_measure(lcs / static_cast<double>(candidate.size()),
                   lcs / static_cast<double>(reference.size()), config.beta);
}

Score token_f1(const TokenizedText& prediction, const TokenizedText& gold) {
  if (prediction.empty() || gold.empty()) return 0.0;
  std::map<std::string_view, std::size_t> gold_counts;
  for (const auto& t : gold.tokens) ++gold_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : prediction.tokens) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const auto o = static_cast<double>(overlap);
  return f_measure(o / static_cast<double>(prediction.size()),
                   o / static_cast<double>(gold.size()), 1.0);
}

Score exact_match_accuracy(std::string_view prediction, std::string_view gold) {
  return normalize_label(prediction) == normalize_label(gold) ? 1.0 : 0.0;
}

Score exact_match_accuracy(std::span<const std::string> predictions,
                           std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("exact_match_accuracy: batch size mismatch");
  }
  if (predictions.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += exact_match_accuracy(predictions[i], golds[i]);
  return hits / static_cast<double>(predictions.size());
}

std::vector<char32_t> utf8_code_points(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > text.size()) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
    bool valid = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b >> 6) != 0x2) {
        valid = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!valid) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto ca = utf8_code_points(a);
  const auto cb = utf8_code_points(b);
  if (ca.empty()) return cb.size();
  if (cb.empty()) return ca.size();
  std::vector<std::size_t> prev(cb.size() + 1), cur(cb.size() + 1);
  for (std::size_t j = 0; j <= cb.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ca.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= cb.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ca[i - 1] == cb[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[cb.size()];
}

Score normalized_edit_distance(std::string_view a, std::string_view b,
                               const EditDistanceConfig& config) {
  const auto la = static_cast<double>(utf8_code_points(a).size());
  const auto lb = static_cast<double>(utf8_code_points(b).size());
  if (la == 0.0 && lb == 0.0) return 0.0;
  const double divisor =
      config.divisor == EditDistanceDivisor::max_length ? std::max(la, lb) : 0.5 * (la + lb);
  return std::min(1.0, static_cast<double>(levenshtein(a, b)) / divisor);
}

Score score_for_task(TaskKind task, std::string_view prediction, std::string_view reference) {
  switch (task) {
    case TaskKind::question_answering:
      return token_f1(TokenizedText::from(prediction), TokenizedText::from(reference));
    case TaskKind::classification:
      return exact_match_accuracy(prediction, reference);
    case TaskKind::generation:
      return rouge_l(TokenizedText::from(prediction), TokenizedText::from(reference));
  }
  throw std::logic_error("unknown TaskKind");
}

}  // namespace mapo
