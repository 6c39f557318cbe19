#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mapo {

using TokenId = std::uint32_t;

/// Word-level vocabulary for the in-process toy LM. Words are whitespace
/// separated and case-sensitive; ids 0..3 are reserved for special tokens.
class Vocabulary {
 public:
  static constexpr TokenId bos = 0;
  static constexpr TokenId sep = 1;
  static constexpr TokenId eos = 2;
  static constexpr TokenId unk = 3;
  static constexpr std::size_t num_special = 4;

  Vocabulary();

  /// Most frequent words first (ties broken lexicographically), capped at
  /// max_size entries including the special tokens.
  static Vocabulary build(std::span<const std::string> corpus, std::size_t max_size = 256);

  std::size_t size() const { return words_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(id); }
  bool contains(std::string_view word) const { return index_.contains(std::string(word)); }
  static bool is_special(TokenId id) { return id < num_special; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins non-special words with single spaces.
  std::string decode(std::span<const TokenId> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  void add(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace mapo
