#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "oracles.hpp"

#include "mapo/reward_model.hpp"

using namespace mapo;

namespace {

RewardModel small_rm(std::uint64_t seed) {
  auto vocab = fixtures::vocabulary({"x", "y", "z", "w"});
  RewardModel rm(fixtures::tiny_lm(vocab, seed));
  fixtures::perturb(rm.parameters(), 0.3, seed + 100);
  return rm;
}

double hand_accuracy(const RewardModel& rm, const RankingPairBatch& batch) {
  double hits = 0;
  for (const auto& it : batch.items) hits += rm.score(it.x, it.y_w) > rm.score(it.x, it.y_l) ? 1 : 0;
  return hits / static_cast<double>(batch.items.size());
}

}  // namespace

TEST_CASE("scores are deterministic and start at zero") {
  auto vocab = fixtures::vocabulary({"x", "y"});
  RewardModel fresh(fixtures::tiny_lm(vocab, 1));
  CHECK(fresh.score("x", "y") == 0.0);
  CHECK(fresh.score("y y", "x") == 0.0);
  const auto rm = small_rm(2);
  CHECK(rm.score("x y", "z") == rm.score("x y", "z"));
}

TEST_CASE("pair loss anchors") {
  CHECK(pair_loss_from_margin(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(pair_loss_from_margin(1.0) == doctest::Approx(-oracle::log_sigmoid(1.0)).epsilon(1e-15));
  CHECK(pair_loss_from_margin(1.0) == doctest::Approx(0.3133).epsilon(1e-4));
  CHECK(pair_loss_from_margin(50.0) < 1e-20);
  CHECK(std::isfinite(pair_loss_from_margin(-800.0)));
}

TEST_CASE("pairwise_ranking_loss matches the closed form") {
  const auto rm = small_rm(3);
  RankingPairBatch batch;
  batch.k = 3;
  batch.items = {{"x", "y z", "w"}, {"x", "y z", "z"}, {"x", "w", "z"}};
  double expected = 0.0;
  for (const auto& it : batch.items) expected -= oracle::log_sigmoid(rm.score(it.x, it.y_w) - rm.score(it.x, it.y_l));
  expected /= 3.0 * static_cast<double>(batch.items.size());
  CHECK(pairwise_ranking_loss(rm, batch) == doctest::Approx(expected).epsilon(1e-12));

  RankingPairBatch tie;
  tie.k = 2;
  tie.items = {{"x", "y", "y"}};
  CHECK(pairwise_ranking_loss(rm, tie) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("pairwise_accuracy conventions") {
  auto vocab = fixtures::vocabulary({"x", "y", "z", "w"});
  RewardModel constant(fixtures::tiny_lm(vocab, 1));
  RankingPairBatch batch;
  batch.k = 4;
  batch.items = {{"x", "y", "z"}, {"x", "w", "z"}, {"x", "y", "w"}, {"y", "z", "x"}};
  CHECK(pairwise_accuracy(constant, batch) == 0.0);
  const auto rm = small_rm(4);
  CHECK(pairwise_accuracy(rm, batch) == doctest::Approx(hand_accuracy(rm, batch)));
}

TEST_CASE("planted ordering is learned; flipped labels are learned inverted") {
  const auto fx = fixtures::planted_ordering(30, 5);
  CHECK(fx.total_pairs == 300);
  auto rm = fixtures::planted_reward_model(fx, 5);
  const auto log = train_reward(rm, fx.train, fx.heldout, fixtures::planted_trainer_config());
  CHECK(log.heldout_accuracy.back() >= 0.95);

  const auto flipped = fixtures::planted_ordering(30, 5, true);
  auto inverted = fixtures::planted_reward_model(flipped, 5);
  train_reward(inverted, flipped.train, flipped.heldout, fixtures::planted_trainer_config());
  CHECK(pairwise_accuracy(inverted, fx.heldout) <= 0.5);
}

TEST_CASE("zero learning rate leaves accuracy unchanged") {
  const auto fx = fixtures::planted_ordering(10, 6);
  auto rm = fixtures::planted_reward_model(fx, 6);
  fixtures::perturb(rm.parameters(), 0.1, 1);
  auto cfg = fixtures::planted_trainer_config();
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  const double before = pairwise_accuracy(rm, fx.heldout);
  const auto log = train_reward(rm, fx.train, fx.heldout, cfg);
  CHECK(log.initial_heldout_accuracy == before);
  CHECK(log.heldout_accuracy.back() == before);
}

TEST_CASE("calibration zeroes the lowest-ranked mean without changing margins") {
  auto rm = small_rm(7);
  std::vector<WarmupRecord> records(2);
  const std::vector<std::pair<std::string, std::vector<std::string>>> data{{"x", {"y", "z w"}}, {"w", {"x x", "y"}}};
  for (std::size_t i = 0; i < 2; ++i) {
    records[i].pair.original = data[i].first;
    for (std::size_t j = 0; j < 2; ++j) records[i].ranking.entries.push_back({data[i].second[j], "", 0.1 * j, {}});
    records[i].ranking.k = 1;
  }
  const double margin = rm.score("x", "z w") - rm.score("x", "y");
  calibrate_reward_offset(rm, records);
  CHECK((rm.score("x", "y") + rm.score("w", "x x")) / 2.0 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rm.score("x", "z w") - rm.score("x", "y") == doctest::Approx(margin).epsilon(1e-12));
}

TEST_CASE("ranking pairs round trip through JSONL") {
  const auto dir = fixtures::scratch_dir("rm_pairs");
  const auto fx = fixtures::planted_ordering(3, 1);
  write_ranking_pairs(dir / "p.jsonl", fx.train);
  const auto loaded = load_ranking_pairs(dir / "p.jsonl");
  REQUIRE(loaded.size() == fx.train.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].k == fx.train[i].k);
    REQUIRE(loaded[i].items.size() == fx.train[i].items.size());
    CHECK(loaded[i].items.front().y_w == fx.train[i].items.front().y_w);
  }
}
