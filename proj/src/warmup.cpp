#include "mapo/warmup.hpp"

#include <algorithm>
#include <set>

#include "mapo/errors.hpp"
#include "mapo/rng.hpp"

namespace mapo {

std::vector<std::string> generate_candidates(const PolicyHandle& oracle, const std::string& original, std::size_t n,
                                             std::uint64_t seed, std::size_t retry_budget,
                                             const GenerationParams& params) {
  if (n == 0) throw std::invalid_argument("generate_candidates: n must be >= 1");
  const std::string instruction = paraphrase_instruction(original);
  std::vector<std::string> out;
  std::set<std::string> seen{original};
  std::uint64_t next_seed = seed;
  std::size_t retries_left = retry_budget;
  const auto draw = [&] {
    GenerationParams p = params;
    p.seed = next_seed++;
    return generate_text(oracle, instruction, p);
  };
  while (out.size() < n) {
    std::string candidate = draw();
    while (seen.contains(candidate) && retries_left > 0) {
      --retries_left;
      candidate = draw();
    }
    seen.insert(candidate);
    out.push_back(std::move(candidate));
  }
  return out;
}

std::vector<ScoredCandidate> score_candidates(const PolicyHandle& target, std::span<const std::string> candidates,
                                              TaskKind task, const std::string& reference,
                                              const GenerationParams& params) {
  if (reference.empty()) throw std::invalid_argument("score_candidates: reference must be non-empty");
  std::vector<ScoredCandidate> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    ScoredCandidate sc;
    sc.prompt_text = c;
    try {
      sc.generated_output = generate_text(target, c, params);
      sc.score = score_for_task(task, sc.generated_output, reference);
    } catch (const std::exception& e) {
      sc.score = 0.0;
      sc.error = e.what();
    }
    out.push_back(std::move(sc));
  }
  return out;
}

PromptPair search_optimal(const std::string& original, std::span<const ScoredCandidate> scored,
                          Score score_original) {
  if (scored.empty()) throw std::invalid_argument("search_optimal: no candidates");
  const ScoredCandidate* best = &scored.front();
  for (const auto& c : scored.subspan(1)) {
    if (c.score > best->score) {
      best = &c;
    } else if (c.score == best->score) {
      if (c.prompt_text.size() < best->prompt_text.size() ||
          (c.prompt_text.size() == best->prompt_text.size() && c.prompt_text < best->prompt_text)) {
        best = &c;
      }
    }
  }
  PromptPair pair;
  pair.original = original;
  pair.score_original = score_original;
  if (best->score > score_original) {
    pair.optimized = best->prompt_text;
    pair.score_optimized = best->score;
  } else {
    pair.optimized = original;
    pair.score_optimized = score_original;
  }
  return pair;
}

RankingSequence build_ranking_sequence(const ScoredCandidate& original, std::span<const ScoredCandidate> scored) {
  if (scored.empty()) throw std::invalid_argument("build_ranking_sequence: no candidates");
  RankingSequence seq;
  seq.k = scored.size();
  seq.entries.assign(scored.begin(), scored.end());
  std::stable_sort(seq.entries.begin(), seq.entries.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.score < b.score; });
  const auto pos = std::upper_bound(seq.entries.begin(), seq.entries.end(), original.score,
                                    [](Score s, const ScoredCandidate& c) { return s < c.score; });
  seq.original_index = static_cast<std::size_t>(pos - seq.entries.begin());
  seq.entries.insert(pos, original);
  return seq;
}

RankingSequence truncate_ranking_band(const RankingSequence& seq, std::size_t band) {
  if (band == 0 || seq.entries.size() <= 2 * band + 1) return seq;
  RankingSequence out;
  const std::size_t n = seq.entries.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = i < band || i >= n - band || i == seq.original_index;
    if (!keep) continue;
    if (i == seq.original_index) out.original_index = out.entries.size();
    out.entries.push_back(seq.entries[i]);
  }
  out.k = out.entries.size() - 1;
  return out;
}

std::vector<RankingPair> enumerate_ranking_pairs(const RankingSequence& seq) {
  if (seq.entries.size() < 2) throw std::invalid_argument("enumerate_ranking_pairs: need at least 2 entries");
  std::vector<RankingPair> out;
  const auto& e = seq.entries;
  for (std::size_t w = e.size(); w-- > 0;) {
    for (std::size_t l = 0; l < e.size(); ++l) {
      if (e[w].score > e[l].score) out.push_back({e[w], e[l]});
    }
  }
  return out;
}

WarmupRecord build_warmup_record(const PolicyHandle& oracle, const PolicyHandle& target, const PromptRecord& input,
                                 const WarmupConfig& config, std::size_t record_index) {
  const std::uint64_t record_seed = CounterRng::mix(config.seed, 0x7761726dULL, record_index);
  std::string reference;
  if (input.reference && !input.reference->empty()) {
    reference = *input.reference;
  } else {
    reference = generate_text(oracle, input.prompt, config.oracle_params);
  }
  const auto candidates = generate_candidates(oracle, input.prompt, config.num_candidates, record_seed,
                                              config.retry_budget, config.oracle_params);
  auto scored = score_candidates(target, candidates, input.task, reference, config.target_params);
  const std::vector<std::string> original_only{input.prompt};
  const auto original_scored = score_candidates(target, original_only, input.task, reference, config.target_params);

  WarmupRecord rec;
  rec.pair = search_optimal(input.prompt, scored, original_scored.front().score);
  rec.pair.task = input.task;
  rec.pair.dataset_name = input.dataset;
  rec.pair.reference_output = reference;
  rec.ranking = truncate_ranking_band(build_ranking_sequence(original_scored.front(), scored), config.ranking_band);
  return rec;
}

std::vector<WarmupRecord> build_warmup_dataset(const PolicyHandle& oracle, const PolicyHandle& target,
                                               std::span<const PromptRecord> inputs, const WarmupConfig& config) {
  std::vector<WarmupRecord> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back(build_warmup_record(oracle, target, inputs[i], config, i));
  return out;
}

nlohmann::json warmup_record_to_json(const PromptPair& pair, const RankingSequence& seq) {
  nlohmann::json candidates = nlohmann::json::array();
  for (std::size_t i = 0; i < seq.entries.size(); ++i) {
    if (i == seq.original_index) continue;
    candidates.push_back({{"text", seq.entries[i].prompt_text}, {"score", seq.entries[i].score}});
  }
  return {{"task", std::string(task_wire_name(pair.task))},
          {"dataset", pair.dataset_name},
          {"original", pair.original},
          {"optimized", pair.optimized},
          {"reference", pair.reference_output},
          {"score_original", pair.score_original},
          {"score_optimized", pair.score_optimized},
          {"candidates", std::move(candidates)}};
}

namespace {

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

WarmupRecord warmup_record_from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed = {"task",      "dataset",        "original",        "optimized",
                                                "reference", "score_original", "score_optimized", "candidates"};
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw SchemaError("unknown warm-up field '" + key + "'");
  }
  WarmupRecord rec;
  const auto task = parse_task(required<std::string>(j, "task"));
  if (!task) throw SchemaError("unknown task '" + j.at("task").get<std::string>() + "'");
  rec.pair.task = *task;
  rec.pair.dataset_name = required<std::string>(j, "dataset");
  rec.pair.original = required<std::string>(j, "original");
  rec.pair.optimized = required<std::string>(j, "optimized");
  rec.pair.reference_output = required<std::string>(j, "reference");
  rec.pair.score_original = required<double>(j, "score_original");
  rec.pair.score_optimized = required<double>(j, "score_optimized");
  if (rec.pair.score_optimized < rec.pair.score_original) {
    throw SchemaError("score_optimized below score_original for '" + rec.pair.original + "'");
  }
  if (!j.contains("candidates") || !j["candidates"].is_array()) throw SchemaError("missing candidates array");
  std::vector<ScoredCandidate> candidates;
  for (const auto& c : j["candidates"]) {
    ScoredCandidate sc;
    sc.prompt_text = required<std::string>(c, "text");
    sc.score = required<double>(c, "score");
    candidates.push_back(std::move(sc));
  }
  ScoredCandidate original;
  original.prompt_text = rec.pair.original;
  original.score = rec.pair.score_original;
  if (candidates.empty()) {
    rec.ranking.entries = {original};
    rec.ranking.original_index = 0;
    rec.ranking.k = 0;
  } else {
    rec.ranking = build_ranking_sequence(original, candidates);
  }
  return rec;
}

RecordCounts emit_warmup_dataset(std::span<const PromptPair> pairs, std::span<const RankingSequence> sequences,
                                 const fs::path& path) {
  if (pairs.size() != sequences.size()) throw std::invalid_argument("pairs and sequences differ in length");
  std::vector<nlohmann::json> records;
  RecordCounts counts;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    records.push_back(warmup_record_to_json(pairs[i], sequences[i]));
    if (sequences[i].entries.size() >= 2) counts.ranking_pairs += enumerate_ranking_pairs(sequences[i]).size();
  }
  write_jsonl(path, records);
  counts.records = records.size();
  return counts;
}

std::vector<WarmupRecord> load_warmup_dataset(const fs::path& path) {
  std::vector<WarmupRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(warmup_record_from_json(j));
  return out;
}

std::size_t emit_ranking_pairs(std::span<const RankingSequence> sequences, std::span<const PromptPair> pairs,
                               const fs::path& path) {
  if (pairs.size() != sequences.size()) throw std::invalid_argument("pairs and sequences differ in length");
  std::vector<nlohmann::json> records;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].entries.size() < 2) continue;
    for (const auto& rp : enumerate_ranking_pairs(sequences[i])) {
      records.push_back({{"x", pairs[i].original},
                         {"y_w", rp.winner.prompt_text},
                         {"y_l", rp.loser.prompt_text},
                         {"k", sequences[i].k}});
    }
  }
  write_jsonl(path, records);
  return records.size();
}

std::vector<std::size_t> split_counts(std::size_t n, std::span<const double> ratios) {
  if (ratios.empty()) throw std::invalid_argument("split_counts: no ratios");
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("split_counts: negative ratio");
    total += r;
  }
  if (total <= 0.0) throw std::invalid_argument("split_counts: ratios sum to zero");
  std::vector<std::size_t> counts(ratios.size());
  std::size_t assigned = 0;
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    counts[i] = static_cast<std::size_t>(static_cast<double>(n) * ratios[i] / total);
    assigned += counts[i];
  }
  counts[0] = n - assigned;
  return counts;
}

std::vector<PromptRecord> load_prompt_records(const fs::path& path) {
  std::vector<PromptRecord> out;
  for (const auto& j : read_jsonl(path)) {
    PromptRecord r;
    const auto task = parse_task(required<std::string>(j, "task"));
    if (!task) throw SchemaError("unknown task in prompt record");
    r.task = *task;
    r.dataset = j.value("dataset", std::string{});
    r.prompt = required<std::string>(j, "prompt");
    if (j.contains("reference") && !j["reference"].is_null()) r.reference = j["reference"].get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mapo
