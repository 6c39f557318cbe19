#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mapo/language_model.hpp"

namespace mapo {

/// Deterministic stand-in for the paraphrasing oracle. For a rewrite
/// instruction it returns a seeded surface rewrite of the quoted prompt
/// (synonym swap, clause reorder, voice flip) that keeps at least
/// `min_overlap` of the original's content tokens and differs from it.
/// Any other prompt is echoed back unchanged.
class StubParaphraser : public TextModel {
 public:
  explicit StubParaphraser(double min_overlap = 0.8) : min_overlap_(min_overlap) {}

  std::string complete(std::string_view prompt, const GenerationParams& params) const override;

  std::string rewrite(std::string_view original, std::uint64_t seed) const;

  /// Returns the quoted prompt if `instruction` is a rewrite instruction.
  static std::optional<std::string> extract_original(std::string_view instruction);

 private:
  double min_overlap_;
};

/// Multiset overlap of content tokens: |tokens(a) ∩ tokens(b)| / |tokens(a)|.
/// 1 when `a` has no tokens.
double content_token_overlap(std::string_view a, std::string_view b);

/// Toy target LLM whose "output" for a prompt is the words of a hidden
/// template that the prompt contains, in template order. Scoring that output
/// against the template rewards prompts by token overlap with it.
class HiddenTemplateTarget : public TextModel {
 public:
  explicit HiddenTemplateTarget(std::string hidden_template);

  std::string complete(std::string_view prompt, const GenerationParams& params) const override;
  const std::string& hidden_template() const { return template_; }

 private:
  std::string template_;
};

}  // namespace mapo
