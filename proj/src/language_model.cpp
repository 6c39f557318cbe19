#include "mapo/language_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mapo/errors.hpp"
#include "mapo/rng.hpp"

namespace mapo {

void GenerationParams::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be a finite value >= 0");
  }
  if (max_tokens == 0 || max_tokens > kMaxSequenceTokens) {
    throw std::invalid_argument("max_tokens must be in [1, 512]");
  }
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::min(0.0, logits[i] - lse);
  return out;
}

double kl_divergence(std::span<const double> log_p, std::span<const double> log_q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  return std::max(0.0, kl);
}

CompletionGradient::CompletionGradient(const CompletionPass& pass, std::size_t vocab_size)
    : pass_(pass), vocab_(vocab_size), dlogits_(pass.cache.length * vocab_size, 0.0),
      dscalars_(pass.cache.length, 0.0) {}

void CompletionGradient::add_token_logprob(std::size_t i, double weight) {
  const auto& lp = pass_.log_probs.at(i);
  double* row = &dlogits_[(pass_.prompt_length - 1 + i) * vocab_];
  const TokenId y = pass_.completion[i];
  for (std::size_t j = 0; j < vocab_; ++j) row[j] -= weight * std::exp(lp[j]);
  row[y] += weight;
}

void CompletionGradient::add_entropy(std::size_t i, double weight) {
  const auto& lp = pass_.log_probs.at(i);
  const double h = pass_.entropy[i];
  double* row = &dlogits_[(pass_.prompt_length - 1 + i) * vocab_];
  for (std::size_t j = 0; j < vocab_; ++j) row[j] -= weight * std::exp(lp[j]) * (lp[j] + h);
}

void CompletionGradient::add_kl(std::size_t i, double weight, std::span<const double> reference_log_probs) {
  const auto& lp = pass_.log_probs.at(i);
  const double kl = kl_divergence(lp, reference_log_probs);
  double* row = &dlogits_[(pass_.prompt_length - 1 + i) * vocab_];
  for (std::size_t j = 0; j < vocab_; ++j) {
    row[j] += weight * std::exp(lp[j]) * (lp[j] - reference_log_probs[j] - kl);
  }
}

void CompletionGradient::add_scalar(std::size_t i, double weight) {
  dscalars_.at(pass_.prompt_length - 1 + i) += weight;
  has_scalars_ = true;
}

CausalLM::CausalLM(std::shared_ptr<const Vocabulary> vocab, const ModelConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), net_(config, seed) {
  if (vocab_ && vocab_->size() > config.vocab_size) {
    throw std::invalid_argument("vocabulary larger than the model's vocab_size");
  }
}

CausalLM::CausalLM(std::shared_ptr<const Vocabulary> vocab, Transformer net)
    : vocab_(std::move(vocab)), net_(std::move(net)) {}

TokenSequence CausalLM::encode_prompt(std::string_view text) const {
  TokenSequence seq;
  seq.token_ids.push_back(Vocabulary::bos);
  for (TokenId id : vocab_->encode(text)) seq.token_ids.push_back(id);
  seq.token_ids.push_back(Vocabulary::sep);
  seq.text = vocab_->decode(seq.token_ids);
  return seq;
}

TokenSequence CausalLM::encode_completion(std::string_view text) const {
  TokenSequence seq;
  seq.token_ids = vocab_->encode(text);
  seq.token_ids.push_back(Vocabulary::eos);
  seq.text = vocab_->decode(seq.token_ids);
  return seq;
}

std::vector<double> CausalLM::next_token_log_probs(std::span<const TokenId> context_tokens) const {
  const auto cache = net_.forward(context_tokens, context_tokens.size() - 1);
  const std::size_t V = net_.config().vocab_size;
  return log_softmax(std::span<const double>(cache.logits).subspan((cache.length - 1) * V, V));
}

TokenSequence CausalLM::generate(const TokenSequence& prompt, const GenerationParams& params) const {
  params.validate();
  if (prompt.token_ids.empty()) throw std::invalid_argument("generate: empty prompt");
  if (prompt.token_ids.size() + params.max_tokens > context()) {
    throw ContextOverflowError("prompt of " + std::to_string(prompt.token_ids.size()) + " tokens plus max_tokens " +
                               std::to_string(params.max_tokens) + " exceeds context window of " +
                               std::to_string(context()));
  }
  CounterRng rng(params.seed, 0x67656eULL);
  std::vector<TokenId> seq = prompt.token_ids;
  TokenSequence out;
  for (std::size_t step = 0; step < params.max_tokens; ++step) {
    const auto lp = next_token_log_probs(seq);
    TokenId next = 0;
    if (params.temperature == 0.0) {
      next = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      std::vector<double> scaled(lp.size());
      for (std::size_t j = 0; j < lp.size(); ++j) scaled[j] = lp[j] / params.temperature;
      const auto sp = log_softmax(scaled);
      const double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<TokenId>(sp.size() - 1);
      for (std::size_t j = 0; j < sp.size(); ++j) {
        acc += std::exp(sp[j]);
        if (u < acc) {
          next = static_cast<TokenId>(j);
          break;
        }
      }
    }
    out.token_ids.push_back(next);
    seq.push_back(next);
    if (next == Vocabulary::eos) break;
  }
  out.text = vocab_ ? vocab_->decode(out.token_ids) : std::string{};
  return out;
}

CompletionPass CausalLM::evaluate(std::span<const TokenId> prompt, std::span<const TokenId> completion) const {
  if (completion.empty()) throw std::invalid_argument("empty completion");
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  std::vector<TokenId> input(prompt.begin(), prompt.end());
  input.insert(input.end(), completion.begin(), completion.end() - 1);
  CompletionPass pass;
  pass.prompt_length = prompt.size();
  pass.completion.assign(completion.begin(), completion.end());
  pass.cache = net_.forward(input, prompt.size() - 1);
  const std::size_t V = net_.config().vocab_size;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    const std::size_t row = prompt.size() - 1 + i;
    auto lp = log_softmax(std::span<const double>(pass.cache.logits).subspan(row * V, V));
    double h = 0.0;
    for (double v : lp) h -= std::exp(v) * v;
    pass.token_logprob.push_back(lp.at(completion[i]));
    pass.entropy.push_back(std::max(0.0, h));
    pass.scalars.push_back(pass.cache.scalars[row]);
    pass.log_probs.push_back(std::move(lp));
  }
  return pass;
}

void CausalLM::backward(const CompletionPass& pass, const CompletionGradient& grad, std::span<double> grads) const {
  net_.backward(pass.cache, grad.dlogits(), grad.has_scalars() ? grad.dscalars() : std::span<const double>{},
                grads);
}

SequenceLogProb CausalLM::sequence_logprob(const TokenSequence& prompt, const TokenSequence& completion) const {
  const auto pass = evaluate(prompt.token_ids, completion.token_ids);
  SequenceLogProb out;
  out.per_token = pass.token_logprob;
  for (double v : out.per_token) out.total += v;
  return out;
}

std::string CausalTextModel::complete(std::string_view prompt, const GenerationParams& params) const {
  return model_->generate(model_->encode_prompt(prompt), params).text;
}

PolicyHandle PolicyHandle::from_model(PolicyRole role, std::shared_ptr<CausalLM> model) {
  PolicyHandle h;
  h.role = role;
  h.text = std::make_shared<CausalTextModel>(model);
  h.model = std::move(model);
  return h;
}

PolicyHandle PolicyHandle::from_text(PolicyRole role, std::shared_ptr<const TextModel> text) {
  PolicyHandle h;
  h.role = role;
  h.text = std::move(text);
  return h;
}

const CausalLM& PolicyHandle::lm() const {
  if (!model) throw std::logic_error("policy handle has no in-process model");
  return *model;
}

CausalLM& PolicyHandle::mutable_lm() const {
  if (!trainable()) throw std::logic_error("policy handle is not a trainable actor");
  return *model;
}

TokenSequence generate(const PolicyHandle& model, const TokenSequence& prompt, const GenerationParams& params) {
  if (model.model) return model.model->generate(prompt, params);
  params.validate();
  TokenSequence out;
  out.text = model.text->complete(prompt.text, params);
  return out;
}

std::string generate_text(const PolicyHandle& model, std::string_view prompt, const GenerationParams& params) {
  params.validate();
  return model.text->complete(prompt, params);
}

SequenceLogProb sequence_logprob(const PolicyHandle& model, const TokenSequence& prompt,
                                 const TokenSequence& completion) {
  return model.lm().sequence_logprob(prompt, completion);
}

std::string paraphrase_instruction(std::string_view original) {
  return "Please rewrite the given text '" + std::string(original) +
         "' while keeping the semantic meaning unchanged.";
}

std::vector<std::string> paraphrase(const PolicyHandle& oracle, std::string_view original, std::size_t n,
                                    const GenerationParams& params) {
  if (n == 0) throw std::invalid_argument("paraphrase: n must be >= 1");
  const std::string instruction = paraphrase_instruction(original);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GenerationParams p = params;
    p.seed = params.seed + i;
    out.push_back(generate_text(oracle, instruction, p));
  }
  return out;
}

PolicyHandle clone_frozen(const PolicyHandle& model) {
  auto copy = std::make_shared<CausalLM>(model.lm());
  return PolicyHandle::from_model(PolicyRole::frozen_sft, std::move(copy));
}

}  // namespace mapo
