#include "mapo/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace mapo {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<bos>", "<sep>", "<eos>", "<unk>"}) add(s);
}

void Vocabulary::add(std::string word) {
  if (index_.contains(word)) return;
  index_.emplace(word, static_cast<TokenId>(words_.size()));
  words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, std::size_t max_size) {
  if (max_size < num_special) throw std::invalid_argument("vocabulary max_size below special-token count");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_whitespace(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [word, count] : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.add(word);
  }
  return vocab;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? unk : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_whitespace(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (is_special(id)) continue;
    if (!out.empty()) out.push_back(' ');
    out += words_.at(id);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json{{"words", words_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  const auto words = j.at("words").get<std::vector<std::string>>();
  Vocabulary vocab;
  if (words.size() < num_special) throw std::runtime_error("vocabulary file missing special tokens");
  for (std::size_t i = 0; i < num_special; ++i) {
    if (words[i] != vocab.words_[i]) throw std::runtime_error("vocabulary file has unexpected special tokens");
  }
  for (std::size_t i = num_special; i < words.size(); ++i) vocab.add(words[i]);
  if (vocab.size() != words.size()) throw std::runtime_error("vocabulary file contains duplicate words");
  return vocab;
}

}  // namespace mapo
