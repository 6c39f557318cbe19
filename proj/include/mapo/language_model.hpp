#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mapo/transformer.hpp"
#include "mapo/vocabulary.hpp"

namespace mapo {

inline constexpr std::size_t kMaxSequenceTokens = 512;

struct GenerationParams {
  /// 0 selects greedy decoding.
  double temperature = 0.0;
  std::size_t max_tokens = 32;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument for negative temperature or a max_tokens
  /// outside [1, 512].
  void validate() const;
  bool operator==(const GenerationParams&) const = default;
};

struct TokenSequence {
  std::vector<TokenId> token_ids;
  std::string text;

  bool operator==(const TokenSequence&) const = default;
};

struct SequenceLogProb {
  std::vector<double> per_token;
  double total = 0.0;
};

/// Log-softmax of one row of logits.
std::vector<double> log_softmax(std::span<const double> logits);

/// Per-completion-token view of one forward pass over prompt + completion.
/// Row i of `log_probs` is the next-token distribution that produced
/// completion token i.
struct CompletionPass {
  ForwardCache cache;
  std::size_t prompt_length = 0;
  std::vector<TokenId> completion;
  std::vector<std::vector<double>> log_probs;
  std::vector<double> token_logprob;
  std::vector<double> entropy;
  /// Scalar-head output at the rows that produced each completion token.
  std::vector<double> scalars;
};

/// Accumulates dLoss/dlogits for the completion rows of a CompletionPass.
class CompletionGradient {
 public:
  explicit CompletionGradient(const CompletionPass& pass, std::size_t vocab_size);

  /// d(loss)/d(log p(token_i)) = weight
  void add_token_logprob(std::size_t i, double weight);
  /// d(loss)/d(entropy_i) = weight
  void add_entropy(std::size_t i, double weight);
  /// d(loss)/d(KL(p_i || reference_i)) = weight; reference is a log-prob row.
  void add_kl(std::size_t i, double weight, std::span<const double> reference_log_probs);
  /// d(loss)/d(scalar_i) = weight, for value heads.
  void add_scalar(std::size_t i, double weight);

  std::span<const double> dlogits() const { return dlogits_; }
  std::span<const double> dscalars() const { return dscalars_; }
  bool has_scalars() const { return has_scalars_; }

 private:
  const CompletionPass& pass_;
  std::size_t vocab_;
  std::vector<double> dlogits_;
  std::vector<double> dscalars_;
  bool has_scalars_ = false;
};

/// KL(p || q) for two log-prob rows.
double kl_divergence(std::span<const double> log_p, std::span<const double> log_q);

/// Trainable in-process toy LM: transformer plus word vocabulary. Prompts are
/// framed as <bos> words <sep>; completions end with <eos>.
class CausalLM {
 public:
  CausalLM(std::shared_ptr<const Vocabulary> vocab, const ModelConfig& config, std::uint64_t seed);
  CausalLM(std::shared_ptr<const Vocabulary> vocab, Transformer net);

  const Vocabulary& vocabulary() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> shared_vocabulary() const { return vocab_; }
  Transformer& network() { return net_; }
  const Transformer& network() const { return net_; }
  std::span<double> parameters() { return net_.parameters(); }
  std::span<const double> parameters() const { return net_.parameters(); }
  std::size_t context() const { return net_.config().context; }

  /// <bos> words <sep>
  TokenSequence encode_prompt(std::string_view text) const;
  /// words <eos>
  TokenSequence encode_completion(std::string_view text) const;

  TokenSequence generate(const TokenSequence& prompt, const GenerationParams& params) const;
  SequenceLogProb sequence_logprob(const TokenSequence& prompt, const TokenSequence& completion) const;

  /// Forward pass over prompt + completion[:-1]; throws on empty completion.
  CompletionPass evaluate(std::span<const TokenId> prompt, std::span<const TokenId> completion) const;
  void backward(const CompletionPass& pass, const CompletionGradient& grad, std::span<double> grads) const;

  /// Next-token log-probabilities after `context_tokens`.
  std::vector<double> next_token_log_probs(std::span<const TokenId> context_tokens) const;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  Transformer net_;
};

/// Anything that maps a prompt string to a completion string: remote
/// endpoints, deterministic stubs, and the toy LM behind a text adapter.
class TextModel {
 public:
  virtual ~TextModel() = default;
  virtual std::string complete(std::string_view prompt, const GenerationParams& params) const = 0;
};

/// Presents a CausalLM as a TextModel.
class CausalTextModel : public TextModel {
 public:
  explicit CausalTextModel(std::shared_ptr<const CausalLM> model) : model_(std::move(model)) {}
  std::string complete(std::string_view prompt, const GenerationParams& params) const override;

 private:
  std::shared_ptr<const CausalLM> model_;
};

enum class PolicyRole { actor, frozen_sft, oracle, target_llm };

/// A model playing one role in the pipeline. `model` is set for in-process
/// toy LMs (and is the trainable state for actors); `text` is always set.
struct PolicyHandle {
  PolicyRole role = PolicyRole::actor;
  std::shared_ptr<CausalLM> model;
  std::shared_ptr<const TextModel> text;

  static PolicyHandle from_model(PolicyRole role, std::shared_ptr<CausalLM> model);
  static PolicyHandle from_text(PolicyRole role, std::shared_ptr<const TextModel> text);

  bool trainable() const { return model != nullptr && role == PolicyRole::actor; }
  /// Throws when the handle has no in-process model.
  const CausalLM& lm() const;
  /// Throws when the handle is not a trainable actor.
  CausalLM& mutable_lm() const;
};

TokenSequence generate(const PolicyHandle& model, const TokenSequence& prompt, const GenerationParams& params);
std::string generate_text(const PolicyHandle& model, std::string_view prompt, const GenerationParams& params);

SequenceLogProb sequence_logprob(const PolicyHandle& model, const TokenSequence& prompt,
                                 const TokenSequence& completion);

/// The oracle instruction wrapped around a prompt that should be rewritten.
std::string paraphrase_instruction(std::string_view original);

/// Issues n rewrite requests to the oracle with seeds seed, seed+1, ...
std::vector<std::string> paraphrase(const PolicyHandle& oracle, std::string_view original, std::size_t n,
                                    const GenerationParams& params = {});

/// Deep copy with role frozen_sft.
PolicyHandle clone_frozen(const PolicyHandle& model);

}  // namespace mapo
