#include "mapo/reward_model.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "mapo/errors.hpp"
#include "mapo/optimizer.hpp"
#include "mapo/rng.hpp"

namespace mapo {

RewardModel::RewardModel(const CausalLM& backbone) : model_(backbone) { model_.network().zero_scalar_head(); }

RewardModel RewardModel::from_model(CausalLM model) {
  RewardModel rm;
  rm.model_ = std::move(model);
  return rm;
}

std::vector<TokenId> RewardModel::encode(std::string_view x, std::string_view y) const {
  auto ids = model_.encode_prompt(x).token_ids;
  for (TokenId id : model_.vocabulary().encode(y)) ids.push_back(id);
  return ids;
}

RewardModel::Evaluation RewardModel::evaluate(std::string_view x, std::string_view y) const {
  const auto ids = encode(x, y);
  Evaluation e;
  // Only the scalar head is read; skip the vocabulary projection entirely.
  e.cache = model_.network().forward(ids, ids.size());
  e.score = e.cache.scalars.back();
  return e;
}

double RewardModel::score(std::string_view x, std::string_view y) const { return evaluate(x, y).score; }

void RewardModel::backward(const Evaluation& eval, double dscore, std::span<double> grads) const {
  std::vector<double> dscalars(eval.cache.length, 0.0);
  dscalars.back() = dscore;
  model_.network().backward(eval.cache, {}, dscalars, grads);
}

double RewardModel::head_bias() const { return model_.parameters()[model_.network().layout().head_b]; }

void RewardModel::set_head_bias(double bias) { model_.parameters()[model_.network().layout().head_b] = bias; }

double pair_loss_from_margin(double margin) {
  // -log sigmoid(m) = softplus(-m), evaluated stably.
  return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double pair_count(std::size_t k) { return static_cast<double>(k) * static_cast<double>(k - 1) / 2.0; }

}  // namespace

double pairwise_ranking_loss(const RewardModel& model, const RankingPairBatch& batch, std::span<double> grads) {
  if (batch.items.empty()) throw std::invalid_argument("pairwise_ranking_loss: empty batch");
  if (batch.k < 2) throw std::invalid_argument("pairwise_ranking_loss: k must be >= 2");
  const double scale = 1.0 / (pair_count(batch.k) * static_cast<double>(batch.items.size()));

  // Score each distinct (x, y) once and accumulate its gradient weight.
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<RewardModel::Evaluation> evals;
  std::vector<double> weight;
  const auto lookup = [&](const std::string& x, const std::string& y) {
    auto [it, inserted] = index.try_emplace({x, y}, evals.size());
    if (inserted) {
      evals.push_back(model.evaluate(x, y));
      weight.push_back(0.0);
    }
    return it->second;
  };
  double loss = 0.0;
  for (const auto& item : batch.items) {
    const std::size_t w = lookup(item.x, item.y_w);
    const std::size_t l = lookup(item.x, item.y_l);
    const double margin = evals[w].score - evals[l].score;
    loss += scale * pair_loss_from_margin(margin);
    const double dmargin = -scale * sigmoid(-margin);
    weight[w] += dmargin;
    weight[l] -= dmargin;
  }
  if (!grads.empty()) {
    for (std::size_t i = 0; i < evals.size(); ++i) {
      if (weight[i] != 0.0) model.backward(evals[i], weight[i], grads);
    }
  }
  return loss;
}

Score pairwise_accuracy(const RewardModel& model, const RankingPairBatch& batch) {
  if (batch.items.empty()) throw std::invalid_argument("pairwise_accuracy: empty batch");
  std::size_t correct = 0;
  for (const auto& item : batch.items) {
    if (model.score(item.x, item.y_w) > model.score(item.x, item.y_l)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.items.size());
}

Score pairwise_accuracy(const RewardModel& model, std::span<const RankingPairBatch> batches) {
  std::size_t correct = 0, total = 0;
  for (const auto& b : batches) {
    for (const auto& item : b.items) {
      if (model.score(item.x, item.y_w) > model.score(item.x, item.y_l)) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

RewardLog train_reward(RewardModel& model, std::span<const RankingPairBatch> train,
                       std::span<const RankingPairBatch> heldout, const SftConfig& config,
                       const RewardEpochCallback& on_epoch) {
  config.validate();
  std::vector<const RankingPairBatch*> usable;
  RewardLog log;
  for (const auto& b : train) {
    if (b.items.empty() || b.k < 2) {
      ++log.skipped_batches;
      continue;
    }
    usable.push_back(&b);
  }
  if (usable.empty()) throw std::invalid_argument("train_reward: no usable ranking pairs");
  log.initial_heldout_accuracy = heldout.empty() ? 0.0 : pairwise_accuracy(model, heldout);

  AdamW optimizer(model.parameters().size(),
                  {.learning_rate = config.learning_rate, .epsilon = config.adam_epsilon,
                   .weight_decay = config.weight_decay},
                  model.model().network().decay_mask());
  std::vector<double> grads(model.parameters().size(), 0.0);
  std::vector<std::size_t> order(usable.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, 0x72657761ULL + epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t accumulated = 0;
    const auto flush = [&] {
      if (accumulated == 0) return;
      const double s = 1.0 / static_cast<double>(accumulated);
      for (double& g : grads) g *= s;
      optimizer.step(model.parameters(), grads);
      std::fill(grads.begin(), grads.end(), 0.0);
      accumulated = 0;
    };
    for (std::size_t idx : order) {
      const double loss = pairwise_ranking_loss(model, *usable[idx], grads);
      if (!std::isfinite(loss)) throw NonFiniteLossError("ranking", loss);
      loss_sum += loss;
      if (++accumulated == config.gradient_accumulation_steps) flush();
    }
    flush();
    const double epoch_loss = loss_sum / static_cast<double>(usable.size());
    log.epoch_loss.push_back(epoch_loss);
    log.heldout_accuracy.push_back(heldout.empty() ? 0.0 : pairwise_accuracy(model, heldout));
    if (on_epoch) on_epoch(epoch, epoch_loss, model);
  }
  return log;
}

std::vector<RankingPairBatch> ranking_batches(std::span<const WarmupRecord> records) {
  std::vector<RankingPairBatch> out;
  for (const auto& rec : records) {
    if (rec.ranking.entries.size() < 2) continue;
    RankingPairBatch batch;
    batch.k = rec.ranking.k;
    for (const auto& rp : enumerate_ranking_pairs(rec.ranking)) {
      batch.items.push_back({rec.pair.original, rp.winner.prompt_text, rp.loser.prompt_text});
    }
    if (!batch.items.empty()) out.push_back(std::move(batch));
  }
  return out;
}

std::vector<RankingPairBatch> load_ranking_pairs(const fs::path& path) {
  std::vector<RankingPairBatch> out;
  for (const auto& j : read_jsonl(path)) {
    RankingItem item;
    std::size_t k = 0;
    try {
      item = {j.at("x").get<std::string>(), j.at("y_w").get<std::string>(), j.at("y_l").get<std::string>()};
      k = j.at("k").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("ranking pair record: ") + e.what());
    }
    if (item.y_w == item.y_l) throw SchemaError("ranking pair with identical y_w and y_l");
    if (out.empty() || out.back().k != k || out.back().items.front().x != item.x) {
      out.push_back(RankingPairBatch{{}, k});
    }
    out.back().items.push_back(std::move(item));
  }
  return out;
}

void write_ranking_pairs(const fs::path& path, std::span<const RankingPairBatch> batches) {
  std::vector<nlohmann::json> records;
  for (const auto& b : batches) {
    for (const auto& item : b.items) records.push_back({{"x", item.x}, {"y_w", item.y_w}, {"y_l", item.y_l}, {"k", b.k}});
  }
  write_jsonl(path, records);
}

double calibrate_reward_offset(RewardModel& model, std::span<const WarmupRecord> records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records) {
    if (rec.ranking.entries.empty()) continue;
    sum += model.score(rec.pair.original, rec.ranking.entries.front().prompt_text);
    ++n;
  }
  if (n == 0) return 0.0;
  const double offset = sum / static_cast<double>(n);
  model.set_head_bias(model.head_bias() - offset);
  return offset;
}

}  // namespace mapo
