#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mapo/language_model.hpp"
#include "mapo/warmup.hpp"

namespace mapo {

/// Task-disambiguation prefix placed before every rewriter input.
std::string_view task_prefix(TaskKind task);

struct SftExample {
  std::string input_text;
  std::string target_text;
  TaskKind task = TaskKind::generation;
};

SftExample format_sft_example(const PromptPair& pair);
std::string format_rewriter_input(TaskKind task, std::string_view original);

struct SftConfig {
  std::size_t epochs = 20;
  double learning_rate = 2e-5;
  std::size_t batch_size = 8;
  std::size_t gradient_accumulation_steps = 8;
  double weight_decay = 0.1;
  double adam_epsilon = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SftConfig&) const = default;
};

struct SftBatchLoss {
  /// Mean over examples of the per-example mean target-token NLL.
  double loss = 0.0;
  std::size_t examples = 0;
  std::size_t skipped = 0;
};

/// Adds d(loss)/d(params) of the batch into `grads` and returns the loss.
/// Examples that do not fit the context window are skipped and counted.
SftBatchLoss sft_step(const CausalLM& model, std::span<const SftExample> batch, std::span<double> grads);

/// Mean per-example loss over a dataset, no gradients.
double mean_sft_loss(const CausalLM& model, std::span<const SftExample> dataset);

struct SftLog {
  std::vector<double> epoch_loss;
  std::size_t skipped_examples = 0;
  std::size_t optimizer_steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, const CausalLM& model)>;

/// Runs config.epochs passes with shuffling, gradient accumulation and
/// AdamW. Throws NonFiniteLossError on a NaN/inf batch loss.
SftLog train_sft(const PolicyHandle& model, std::span<const SftExample> dataset, const SftConfig& config,
                 const EpochCallback& on_epoch = {});

}  // namespace mapo
