#include "mapo/stub_models.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>

#include "mapo/rng.hpp"
#include "mapo/text_metrics.hpp"

namespace mapo {

namespace {

const std::vector<std::vector<std::string>>& synonym_groups() {
  static const std::vector<std::vector<std::string>> groups = {
      {"summarize", "outline", "recap", "condense"},
      {"article", "story", "report", "piece"},
      {"write", "compose", "draft", "produce"},
      {"explain", "describe", "clarify", "detail"},
      {"short", "brief", "concise", "compact"},
      {"main", "key", "central", "core"},
      {"points", "ideas", "facts", "details"},
      {"classify", "categorize", "label", "sort"},
      {"identify", "determine", "find", "name"},
      {"topic", "subject", "theme"},
      {"question", "query"},
      {"following", "given", "provided"},
      {"sentence", "statement"},
      {"movie", "film"},
      {"review", "critique"},
      {"quickly", "briefly", "simply"},
      {"list", "enumerate"},
  };
  return groups;
}

const std::unordered_map<std::string, std::size_t>& synonym_index() {
  static const auto index = [] {
    std::unordered_map<std::string, std::size_t> m;
    const auto& groups = synonym_groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (const auto& w : groups[g]) m.emplace(w, g);
    }
    return m;
  }();
  return index;
}

const std::map<std::string, std::string>& participles() {
  static const std::map<std::string, std::string> table = {
      {"summarize", "summarized"}, {"outline", "outlined"},     {"write", "written"},
      {"explain", "explained"},    {"describe", "described"},   {"classify", "classified"},
      {"identify", "identified"},  {"answer", "answered"},      {"translate", "translated"},
      {"list", "listed"},          {"compose", "composed"},     {"draft", "drafted"},
      {"condense", "condensed"},   {"categorize", "categorized"}, {"label", "labeled"},
      {"determine", "determined"}, {"recap", "recapped"},      {"clarify", "clarified"},
  };
  return table;
}

struct WordParts {
  std::string core;   // lowercased, trailing punctuation removed
  std::string tail;   // trailing punctuation
  bool capitalized = false;
};

WordParts split_word(const std::string& word) {
  WordParts parts;
  std::size_t end = word.size();
  while (end > 0 && std::ispunct(static_cast<unsigned char>(word[end - 1]))) --end;
  parts.tail = word.substr(end);
  parts.core = word.substr(0, end);
  parts.capitalized = !parts.core.empty() && std::isupper(static_cast<unsigned char>(parts.core[0]));
  for (char& c : parts.core) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return parts;
}

std::string capitalize(std::string s, bool cap) {
  if (cap && !s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::optional<std::vector<std::string>> synonym_swap(const std::vector<std::string>& words, CounterRng& rng) {
  const auto& index = synonym_index();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (index.contains(split_word(words[i]).core)) candidates.push_back(i);
  }
  if (candidates.empty()) return std::nullopt;
  const std::size_t at = candidates[rng.index(candidates.size())];
  const auto parts = split_word(words[at]);
  const auto& group = synonym_groups()[index.at(parts.core)];
  std::vector<std::string> others;
  for (const auto& w : group) {
    if (w != parts.core) others.push_back(w);
  }
  auto out = words;
  out[at] = capitalize(others[rng.index(others.size())], parts.capitalized) + parts.tail;
  return out;
}

std::optional<std::vector<std::string>> clause_reorder(const std::vector<std::string>& words) {
  const std::size_t n = words.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (words[i].size() > 1 && words[i].back() == ',') {
      std::vector<std::string> a(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      std::vector<std::string> b(words.begin() + static_cast<std::ptrdiff_t>(i) + 1, words.end());
      a.back().pop_back();
      b.back() += ",";
      b.insert(b.end(), a.begin(), a.end());
      return b;
    }
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (split_word(words[i]).core == "and" && words[i] == "and") {
      std::vector<std::string> out(words.begin() + static_cast<std::ptrdiff_t>(i) + 1, words.end());
      out.push_back("and");
      out.insert(out.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(i));
      return out;
    }
  }
  return std::nullopt;
}

std::optional<std::vector<std::string>> voice_flip(const std::vector<std::string>& words) {
  const std::size_t n = words.size();
  if (n < 2) return std::nullopt;
  const auto& table = participles();
  const auto first = split_word(words[0]);
  if (auto it = table.find(first.core); it != table.end() && first.tail.empty()) {
    std::vector<std::string> out(words.begin() + 1, words.end());
    auto last = split_word(out.back());
    std::string tail = last.tail;
    out.back().resize(out.back().size() - tail.size());
    if (first.capitalized) out[0] = capitalize(out[0], true);
    out.push_back("should");
    out.push_back("be");
    out.push_back(it->second + tail);
    return out;
  }
  if (n >= 4) {
    const auto last = split_word(words[n - 1]);
    if (split_word(words[n - 3]).core == "should" && split_word(words[n - 2]).core == "be") {
      for (const auto& [verb, participle] : table) {
        if (participle != last.core) continue;
        std::vector<std::string> out;
        const bool cap = split_word(words[0]).capitalized;
        out.push_back(capitalize(verb, cap));
        for (std::size_t i = 0; i + 3 < n; ++i) out.push_back(words[i]);
        if (cap) out[1][0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[1][0])));
        out.back() += last.tail;
        return out;
      }
    }
  }
  return std::nullopt;
}

}  // namespace

double content_token_overlap(std::string_view a, std::string_view b) {
  const auto ta = TokenizedText::from(a);
  if (ta.empty()) return 1.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : TokenizedText::from(b).tokens) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : ta.tokens) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return static_cast<double>(overlap) / static_cast<double>(ta.size());
}

std::optional<std::string> StubParaphraser::extract_original(std::string_view instruction) {
  constexpr std::string_view head = "Please rewrite the given text '";
  constexpr std::string_view foot = "' while keeping the semantic meaning unchanged.";
  if (instruction.size() < head.size() + foot.size()) return std::nullopt;
  if (instruction.substr(0, head.size()) != head) return std::nullopt;
  if (instruction.substr(instruction.size() - foot.size()) != foot) return std::nullopt;
  return std::string(instruction.substr(head.size(), instruction.size() - head.size() - foot.size()));
}

std::string StubParaphraser::rewrite(std::string_view original, std::uint64_t seed) const {
  CounterRng rng(seed, fnv1a(original));
  const auto words = split_whitespace(original);
  const std::string normalized = join(words);
  auto current = words;
  const std::size_t wanted = 1 + rng.index(2);
  std::size_t applied = 0;
  for (std::size_t attempt = 0; attempt < 12 && applied < wanted; ++attempt) {
    std::optional<std::vector<std::string>> next;
    switch (rng.index(3)) {
      case 0: next = synonym_swap(current, rng); break;
      case 1: next = clause_reorder(current); break;
      default: next = voice_flip(current); break;
    }
    if (!next || *next == current) continue;
    if (content_token_overlap(original, join(*next)) < min_overlap_) continue;
    current = std::move(*next);
    ++applied;
  }
  std::string out = join(current);
  if (out == normalized || out == original) {
    // No admissible rewrite: fall back to a case change or a trailing period,
    // neither of which alters the content tokens.
    if (!out.empty() && std::isalpha(static_cast<unsigned char>(out[0]))) {
      const auto c = static_cast<unsigned char>(out[0]);
      out[0] = static_cast<char>(std::isupper(c) ? std::tolower(c) : std::toupper(c));
    } else {
      out += out.empty() ? "." : " .";
    }
  }
  return out;
}

std::string StubParaphraser::complete(std::string_view prompt, const GenerationParams& params) const {
  if (auto original = extract_original(prompt)) return rewrite(*original, params.seed);
  return std::string(prompt);
}

HiddenTemplateTarget::HiddenTemplateTarget(std::string hidden_template) : template_(std::move(hidden_template)) {}

std::string HiddenTemplateTarget::complete(std::string_view prompt, const GenerationParams&) const {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : TokenizedText::from(prompt).tokens) ++counts[t];
  std::vector<std::string> out;
  for (const auto& t : TokenizedText::from(template_).tokens) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      out.push_back(t);
    }
  }
  return join(out);
}

}  // namespace mapo
