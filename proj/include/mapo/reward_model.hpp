#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mapo/language_model.hpp"
#include "mapo/persistence.hpp"
#include "mapo/sft.hpp"
#include "mapo/text_metrics.hpp"
#include "mapo/warmup.hpp"

namespace mapo {

/// Scalar scorer r(x, y): a copy of the SFT backbone whose scalar head reads
/// the final hidden state at the last token of "<bos> x <sep> y".
class RewardModel {
 public:
  /// Copies the backbone and zeroes the scalar head.
  explicit RewardModel(const CausalLM& backbone);

  double score(std::string_view x, std::string_view y) const;

  struct Evaluation {
    double score = 0.0;
    ForwardCache cache;
  };
  Evaluation evaluate(std::string_view x, std::string_view y) const;
  /// grads += dscore * d(score)/d(params)
  void backward(const Evaluation& eval, double dscore, std::span<double> grads) const;

  std::vector<TokenId> encode(std::string_view x, std::string_view y) const;

  CausalLM& model() { return model_; }
  const CausalLM& model() const { return model_; }
  std::span<double> parameters() { return model_.parameters(); }

  double head_bias() const;
  void set_head_bias(double bias);

  static RewardModel from_model(CausalLM model);

 private:
  RewardModel() = default;
  CausalLM model_{nullptr, Transformer{}};
};

struct RankingItem {
  std::string x;
  std::string y_w;
  std::string y_l;
};

/// Pairs that came from one ranking sequence with k candidates.
struct RankingPairBatch {
  std::vector<RankingItem> items;
  std::size_t k = 2;
};

/// -(1 / C(k, 2)) * mean_items log sigmoid(r(x, y_w) - r(x, y_l)). When
/// `grads` is non-empty the gradient is accumulated into it.
double pairwise_ranking_loss(const RewardModel& model, const RankingPairBatch& batch, std::span<double> grads = {});

/// The loss term for a single margin: -log sigmoid(margin).
double pair_loss_from_margin(double margin);

/// Fraction of items with r(x, y_w) > r(x, y_l) strictly.
Score pairwise_accuracy(const RewardModel& model, const RankingPairBatch& batch);
Score pairwise_accuracy(const RewardModel& model, std::span<const RankingPairBatch> batches);

struct RewardLog {
  double initial_heldout_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> heldout_accuracy;
  std::size_t skipped_batches = 0;
};

using RewardEpochCallback = std::function<void(std::size_t epoch, double loss, const RewardModel& model)>;

RewardLog train_reward(RewardModel& model, std::span<const RankingPairBatch> train,
                       std::span<const RankingPairBatch> heldout, const SftConfig& config,
                       const RewardEpochCallback& on_epoch = {});

/// One batch per ranking sequence.
std::vector<RankingPairBatch> ranking_batches(std::span<const WarmupRecord> records);

/// Reads ranking-pair JSONL; consecutive records with the same x and k form
/// one batch.
std::vector<RankingPairBatch> load_ranking_pairs(const fs::path& path);
void write_ranking_pairs(const fs::path& path, std::span<const RankingPairBatch> batches);

/// Shifts the head bias so the mean score of the lowest-ranked entry of
/// each sequence is zero. Margins, and therefore the ranking loss and
/// accuracy, are unchanged.
double calibrate_reward_offset(RewardModel& model, std::span<const WarmupRecord> records);

}  // namespace mapo
