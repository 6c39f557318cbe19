#include "mapo/sft.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "mapo/errors.hpp"
#include "mapo/optimizer.hpp"
#include "mapo/rng.hpp"

namespace mapo {

std::string_view task_prefix(TaskKind task) {
  switch (task) {
    case TaskKind::generation: return "This is a generative task. ";
    case TaskKind::question_answering: return "This is a question-answering task. ";
    case TaskKind::classification: return "This is a classification task. ";
  }
  throw std::logic_error("unknown TaskKind");
}

std::string format_rewriter_input(TaskKind task, std::string_view original) {
  return std::string(task_prefix(task)) + std::string(original);
}

SftExample format_sft_example(const PromptPair& pair) {
  if (pair.original.empty() || pair.optimized.empty()) throw std::invalid_argument("format_sft_example: empty prompt");
  return {format_rewriter_input(pair.task, pair.original), pair.optimized, pair.task};
}

void SftConfig::validate() const {
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw ConfigError("sft learning_rate must be >= 0");
  if (batch_size == 0) throw ConfigError("sft batch_size must be positive");
  if (gradient_accumulation_steps == 0) throw ConfigError("gradient_accumulation_steps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (adam_epsilon <= 0.0) throw ConfigError("adam epsilon must be positive");
}

namespace {

bool fits(const CausalLM& model, const TokenSequence& prompt, const TokenSequence& target) {
  return prompt.token_ids.size() + target.token_ids.size() - 1 <= model.context();
}

}  // namespace

SftBatchLoss sft_step(const CausalLM& model, std::span<const SftExample> batch, std::span<double> grads) {
  if (batch.empty()) throw std::invalid_argument("sft_step: empty batch");
  SftBatchLoss result;
  struct Prepared {
    TokenSequence prompt, target;
  };
  std::vector<Prepared> usable;
  for (const auto& ex : batch) {
    Prepared p{model.encode_prompt(ex.input_text), model.encode_completion(ex.target_text)};
    if (!fits(model, p.prompt, p.target)) {
      ++result.skipped;
      std::cerr << "warning: skipping SFT example longer than the context window: " << ex.input_text << "\n";
      continue;
    }
    usable.push_back(std::move(p));
  }
  if (usable.empty()) return result;
  const double inv_examples = 1.0 / static_cast<double>(usable.size());
  const std::size_t V = model.network().config().vocab_size;
  for (const auto& p : usable) {
    const auto pass = model.evaluate(p.prompt.token_ids, p.target.token_ids);
    const double inv_tokens = 1.0 / static_cast<double>(pass.completion.size());
    double nll = 0.0;
    for (double lp : pass.token_logprob) nll -= lp;
    result.loss += nll * inv_tokens * inv_examples;
    if (!grads.empty()) {
      CompletionGradient g(pass, V);
      for (std::size_t i = 0; i < pass.completion.size(); ++i) g.add_token_logprob(i, -inv_tokens * inv_examples);
      model.backward(pass, g, grads);
    }
  }
  result.examples = usable.size();
  return result;
}

double mean_sft_loss(const CausalLM& model, std::span<const SftExample> dataset) {
  if (dataset.empty()) return 0.0;
  return sft_step(model, dataset, {}).loss;
}

SftLog train_sft(const PolicyHandle& handle, std::span<const SftExample> dataset, const SftConfig& config,
                 const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train_sft: empty dataset");
  config.validate();
  CausalLM& model = handle.mutable_lm();
  SftLog log;
  if (config.epochs == 0) return log;

  AdamW optimizer(model.parameters().size(),
                  {.learning_rate = config.learning_rate, .epsilon = config.adam_epsilon,
                   .weight_decay = config.weight_decay},
                  model.network().decay_mask());
  std::vector<double> grads(model.parameters().size(), 0.0);
  std::vector<std::size_t> order(dataset.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, epoch);
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t batches = 0, accumulated = 0;
    const auto flush = [&] {
      if (accumulated == 0) return;
      const double scale = 1.0 / static_cast<double>(accumulated);
      for (double& g : grads) g *= scale;
      optimizer.step(model.parameters(), grads);
      std::fill(grads.begin(), grads.end(), 0.0);
      accumulated = 0;
      ++log.optimizer_steps;
    };
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<SftExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(dataset[order[i]]);
      }
      const auto step = sft_step(model, batch, grads);
      log.skipped_examples += step.skipped;
      if (step.examples == 0) continue;
      if (!std::isfinite(step.loss)) throw NonFiniteLossError("sft", step.loss);
      loss_sum += step.loss;
      ++batches;
      if (++accumulated == config.gradient_accumulation_steps) flush();
    }
    flush();
    const double epoch_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    log.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss, model);
  }
  return log;
}

}  // namespace mapo
