#include "mapo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mapo/errors.hpp"
#include "mapo/remote_client.hpp"
#include "mapo/rl_trainer.hpp"
#include "mapo/rng.hpp"
#include "mapo/sft.hpp"
#include "mapo/stub_models.hpp"

namespace mapo {

namespace {

const std::vector<std::string> kSplits = {"train", "validation", "test"};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string run_relative(const fs::path& run_dir, const fs::path& p) { return fs::relative(p, run_dir).generic_string(); }

std::size_t stage_position(const std::string& stage) {
  for (std::size_t i = 0; i < std::size(kStageOrder); ++i) {
    if (stage == kStageOrder[i]) return i;
  }
  throw std::invalid_argument("unknown stage " + stage);
}

/// Shared prologue: loads the manifest, applies the rerun guard and clears
/// the stage directory.
RunManifest begin_stage(const PipelineConfig& config, const std::string& stage, const StageOptions& options,
                        const fs::path& stage_dir) {
  const fs::path run_dir = config.paths.run_dir;
  auto manifest = RunManifest::load_or_create(run_dir, config_hash(config));
  if (manifest.has(stage)) {
    if (!options.force) {
      throw Error("stage '" + stage + "' already completed in " + run_dir.string() + "; pass --force to rerun it");
    }
    for (std::size_t i = stage_position(stage); i < std::size(kStageOrder); ++i) {
      manifest.stages.erase(kStageOrder[i]);
    }
    manifest.save(run_dir);
  }
  if (!stage_dir.empty()) fs::remove_all(stage_dir);
  return manifest;
}

template <typename Body>
void run_stage(const fs::path& stage_dir, Body&& body) {
  try {
    body();
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage_dir, ec);
    throw;
  }
}

std::vector<WarmupRecord> load_split(const RunLayout& layout, const std::string& split) {
  const auto path = layout.warmup_split(split);
  if (!fs::exists(path)) return {};
  return load_warmup_dataset(path);
}

std::vector<std::string> load_general_texts(const std::string& path) {
  std::vector<std::string> texts;
  if (path.empty()) return texts;
  for (const auto& j : read_jsonl(path)) {
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw SchemaError(path + ": general-task records need a string \"text\" field");
    }
    texts.push_back(j["text"].get<std::string>());
  }
  return texts;
}

void save_stage(const PipelineConfig& config, RunManifest& manifest, const std::string& stage, StageRecord record) {
  record.completed_at = utc_now();
  manifest.stages[stage] = std::move(record);
  manifest.save(config.paths.run_dir);
}

std::string checkpoint_name(const std::string& key, std::size_t n) { return key + "_" + std::to_string(n); }

}  // namespace

const StageRecord& RunManifest::require(const std::string& stage) const {
  auto it = stages.find(stage);
  if (it == stages.end()) throw MissingUpstreamError("missing upstream stage '" + stage + "': run it first");
  return it->second;
}

void RunManifest::verify(const fs::path& run_dir, const std::string& stage) const {
  for (const auto& [path, digest] : require(stage).outputs) {
    const fs::path full = run_dir / path;
    if (!fs::exists(full)) throw Error("artifact of stage '" + stage + "' is missing: " + full.string());
    if (file_sha256(full) != digest) {
      throw Error("artifact of stage '" + stage + "' does not match its recorded digest: " + full.string());
    }
  }
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json st = nlohmann::json::object();
  for (const auto& [name, r] : stages) {
    st[name] = {{"completed_at", r.completed_at}, {"seed", r.seed},     {"inputs", r.inputs},
                {"outputs", r.outputs},           {"details", r.details}};
  }
  return {{"run_id", run_id}, {"config_hash", config_hash}, {"stages", st}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& [name, r] : j.at("stages").items()) {
      StageRecord rec;
      rec.completed_at = r.at("completed_at").get<std::string>();
      rec.seed = r.at("seed").get<std::uint64_t>();
      rec.inputs = r.at("inputs").get<std::map<std::string, std::string>>();
      rec.outputs = r.at("outputs").get<std::map<std::string, std::string>>();
      rec.details = r.at("details");
      m.stages.emplace(name, std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load_or_create(const fs::path& run_dir, const std::string& hash) {
  const fs::path path = RunLayout{run_dir}.manifest();
  if (fs::exists(path)) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("malformed run manifest " + path.string() + ": " + e.what());
    }
  }
  RunManifest m;
  m.config_hash = hash;
  m.run_id = hash.substr(0, 12);
  return m;
}

void RunManifest::save(const fs::path& run_dir) const {
  fs::create_directories(run_dir);
  write_file_atomic(RunLayout{run_dir}.manifest(), to_json().dump(2) + "\n");
}

std::map<std::string, std::string> digest_tree(const fs::path& run_dir, const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) out[run_relative(run_dir, entry.path())] = file_sha256(entry.path());
  }
  return out;
}

std::shared_ptr<const TextModel> make_text_model(const std::string& spec, const EndpointsConfig& endpoints) {
  if (spec == "stub") return std::make_shared<StubParaphraser>();
  if (spec == "hidden_template") return std::make_shared<HiddenTemplateTarget>(endpoints.target_template);
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    RemoteEndpointConfig rc;
    rc.url = spec;
    rc.timeout_seconds = endpoints.timeout_seconds;
    rc.max_attempts = endpoints.max_attempts;
    rc.max_in_flight = endpoints.max_in_flight;
    return std::make_shared<RemoteClient>(rc);
  }
  throw ConfigError("unknown endpoint '" + spec + "': expected stub, hidden_template or an http(s) URL");
}

fs::path final_checkpoint(const RunManifest& manifest, const fs::path& run_dir, const std::string& stage) {
  const auto& rec = manifest.require(stage);
  if (!rec.details.contains("final_checkpoint")) throw Error("stage '" + stage + "' recorded no checkpoint");
  return run_dir / rec.details["final_checkpoint"].get<std::string>();
}

void cmd_warmup(const PipelineConfig& config, const StageOptions& options) {
  const RunLayout layout{config.paths.run_dir};
  const fs::path dir = layout.root / "warmup";
  auto manifest = begin_stage(config, "warmup", options, dir);
  run_stage(dir, [&] {
    if (config.paths.prompts.empty()) throw ConfigError("paths.prompts must name the input prompt file");
    const auto inputs = load_prompt_records(config.paths.prompts);
    auto oracle = PolicyHandle::from_text(PolicyRole::oracle, make_text_model(config.endpoints.oracle, config.endpoints));
    auto target =
        PolicyHandle::from_text(PolicyRole::target_llm, make_text_model(config.endpoints.target, config.endpoints));
    WarmupConfig wc = config.warmup.builder;
    wc.seed = config.seeds.warmup;
    const auto records = build_warmup_dataset(oracle, target, inputs, wc);

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng(config.seeds.warmup, 0x73706c6974ULL).shuffle(std::span<std::size_t>(order));
    const std::vector<double> ratios{config.warmup.train_fraction, config.warmup.validation_fraction,
                                     config.warmup.test_fraction};
    const auto counts = split_counts(records.size(), ratios);

    fs::create_directories(dir);
    StageRecord rec;
    rec.seed = config.seeds.warmup;
    rec.inputs[config.paths.prompts] = file_sha256(config.paths.prompts);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + counts[s]));
      cursor += counts[s];
      std::sort(idx.begin(), idx.end());
      std::vector<PromptPair> pairs;
      std::vector<RankingSequence> seqs;
      for (std::size_t i : idx) {
        pairs.push_back(records[i].pair);
        seqs.push_back(records[i].ranking);
      }
      const auto written = emit_warmup_dataset(pairs, seqs, layout.warmup_split(kSplits[s]));
      const auto ranking = emit_ranking_pairs(seqs, pairs, layout.ranking_split(kSplits[s]));
      rec.details["records"][kSplits[s]] = written.records;
      rec.details["ranking_pairs"][kSplits[s]] = ranking;
    }
    rec.outputs = digest_tree(layout.root, dir);
    save_stage(config, manifest, "warmup", std::move(rec));
  });
}

void cmd_sft(const PipelineConfig& config, const StageOptions& options) {
  const RunLayout layout{config.paths.run_dir};
  const fs::path dir = layout.sft_dir();
  auto manifest = RunManifest::load_or_create(layout.root, config_hash(config));
  manifest.require("warmup");
  manifest.verify(layout.root, "warmup");
  manifest = begin_stage(config, "sft", options, dir);
  run_stage(dir, [&] {
    const auto train = load_split(layout, "train");
    std::vector<std::string> corpus;
    for (const auto& split : kSplits) {
      for (const auto& r : load_split(layout, split)) {
        corpus.push_back(format_rewriter_input(r.pair.task, r.pair.original));
        corpus.push_back(r.pair.optimized);
        for (const auto& e : r.ranking.entries) corpus.push_back(e.prompt_text);
      }
    }
    for (auto& t : load_general_texts(config.paths.general)) corpus.push_back(std::move(t));
    auto vocab = std::make_shared<const Vocabulary>(Vocabulary::build(corpus, config.sft.model.vocab_size));
    // The configured vocab_size is an upper bound; the output layer matches
    // the vocabulary actually built so every sampled id decodes.
    ModelConfig mc = config.sft.model;
    mc.vocab_size = vocab->size();
    auto model = std::make_shared<CausalLM>(vocab, mc, config.seeds.sft);
    const auto actor = PolicyHandle::from_model(PolicyRole::actor, model);

    std::vector<SftExample> examples;
    for (const auto& r : train) examples.push_back(format_sft_example(r.pair));
    SftConfig sc = config.sft.trainer;
    sc.seed = config.seeds.sft;
    const std::string hash = config_hash(config);
    fs::create_directories(dir);
    std::ofstream log(dir / "log.jsonl", std::ios::binary);
    std::string last;
    const auto save = [&](std::size_t epoch, double loss, const CausalLM& m) {
      const std::string name = checkpoint_name("epoch", epoch);
      save_checkpoint(dir / name, m, {"epoch", epoch, loss, config.seeds.sft, hash});
      last = name;
    };
    const auto result = train_sft(actor, examples, sc, [&](std::size_t epoch, double loss, const CausalLM& m) {
      log << nlohmann::json{{"epoch", epoch}, {"loss", loss}}.dump() << '\n';
      log.flush();
      const std::size_t every = config.sft.checkpoint_every;
      if (epoch == sc.epochs || (every > 0 && epoch % every == 0)) save(epoch, loss, m);
    });
    log.close();
    if (last.empty()) save(0, 0.0, *model);

    StageRecord rec;
    rec.seed = config.seeds.sft;
    rec.inputs[run_relative(layout.root, layout.warmup_split("train"))] = file_sha256(layout.warmup_split("train"));
    rec.outputs = digest_tree(layout.root, dir);
    rec.details["final_checkpoint"] = run_relative(layout.root, dir / last);
    rec.details["examples"] = examples.size();
    rec.details["skipped_examples"] = result.skipped_examples;
    rec.details["optimizer_steps"] = result.optimizer_steps;
    rec.details["vocabulary_size"] = vocab->size();
    if (!result.epoch_loss.empty()) rec.details["final_loss"] = result.epoch_loss.back();
    save_stage(config, manifest, "sft", std::move(rec));
  });
}

void cmd_reward(const PipelineConfig& config, const StageOptions& options) {
  const RunLayout layout{config.paths.run_dir};
  const fs::path dir = layout.reward_dir();
  auto manifest = RunManifest::load_or_create(layout.root, config_hash(config));
  manifest.require("warmup");
  manifest.require("sft");
  manifest.verify(layout.root, "warmup");
  manifest.verify(layout.root, "sft");
  const fs::path sft_ckpt = final_checkpoint(manifest, layout.root, "sft");
  manifest = begin_stage(config, "reward", options, dir);
  run_stage(dir, [&] {
    const auto train_records = load_split(layout, "train");
    const auto heldout_records = load_split(layout, "validation");
    const auto train = ranking_batches(train_records);
    const auto heldout = ranking_batches(heldout_records.empty() ? train_records : heldout_records);
    RewardModel rm(load_checkpoint(sft_ckpt));
    SftConfig rc = config.reward.trainer;
    rc.seed = config.seeds.reward;
    fs::create_directories(dir);
    std::ofstream log(dir / "log.jsonl", std::ios::binary);
    const auto result = train_reward(rm, train, heldout, rc, [&](std::size_t epoch, double loss, const RewardModel&) {
      log << nlohmann::json{{"epoch", epoch}, {"loss", loss}}.dump() << '\n';
    });
    for (std::size_t e = 0; e < result.heldout_accuracy.size(); ++e) {
      log << nlohmann::json{{"epoch", e + 1}, {"heldout_accuracy", result.heldout_accuracy[e]}}.dump() << '\n';
    }
    log.close();
    const double offset = calibrate_reward_offset(rm, train_records);
    const double loss = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
    const fs::path ckpt = dir / checkpoint_name("epoch", rc.epochs);
    save_checkpoint(ckpt, rm.model(), {"epoch", rc.epochs, loss, config.seeds.reward, config_hash(config)});

    StageRecord rec;
    rec.seed = config.seeds.reward;
    for (const auto& split : {"train", "validation"}) {
      if (fs::exists(layout.warmup_split(split))) {
        rec.inputs[run_relative(layout.root, layout.warmup_split(split))] = file_sha256(layout.warmup_split(split));
      }
    }
    rec.inputs[run_relative(layout.root, sft_ckpt / "parameters.bin")] = file_sha256(sft_ckpt / "parameters.bin");
    rec.outputs = digest_tree(layout.root, dir);
    rec.details["final_checkpoint"] = run_relative(layout.root, ckpt);
    rec.details["initial_heldout_accuracy"] = result.initial_heldout_accuracy;
    rec.details["heldout_accuracy"] =
        result.heldout_accuracy.empty() ? result.initial_heldout_accuracy : result.heldout_accuracy.back();
    rec.details["calibration_offset"] = offset;
    rec.details["skipped_batches"] = result.skipped_batches;
    save_stage(config, manifest, "reward", std::move(rec));
  });
}

void cmd_rl(const PipelineConfig& config, const StageOptions& options) {
  const RunLayout layout{config.paths.run_dir};
  const fs::path dir = layout.rl_dir();
  auto manifest = RunManifest::load_or_create(layout.root, config_hash(config));
  manifest.require("sft");
  manifest.require("reward");
  for (const auto* s : {"warmup", "sft", "reward"}) manifest.verify(layout.root, s);
  const fs::path sft_ckpt = final_checkpoint(manifest, layout.root, "sft");
  const fs::path reward_ckpt = final_checkpoint(manifest, layout.root, "reward");
  manifest = begin_stage(config, "rl", options, dir);
  run_stage(dir, [&] {
    const auto sft_model = load_checkpoint(sft_ckpt);
    const auto actor = PolicyHandle::from_model(PolicyRole::actor, std::make_shared<CausalLM>(sft_model));
    const auto frozen = clone_frozen(actor);
    CausalLM critic = make_critic(sft_model);
    const auto reward = RewardModel::from_model(load_checkpoint(reward_ckpt));
    const auto records = load_split(layout, "train");
    const auto prompts = rl_prompts_from(records);
    const auto general = load_general_texts(config.paths.general);
    const auto pretrain = sample_pretrain_sequences(sft_model, general, config.rl.pretrain_fraction, config.seeds.rl);
    RlConfig rc = config.rl.trainer;
    rc.seed = config.seeds.rl;
    rc.rollout_params.seed = config.seeds.rl;
    const std::string hash = config_hash(config);

    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    std::string last;
    const auto save = [&](std::size_t step, double loss, const CausalLM& a, const CausalLM& c) {
      const std::string name = checkpoint_name("step", step);
      save_checkpoint(dir / name, a, {"step", step, loss, config.seeds.rl, hash});
      save_checkpoint(dir / name / "critic", c, {"step", step, loss, config.seeds.rl, hash});
      last = name;
    };
    const auto log = train_rl(actor, critic, frozen, reward, prompts, pretrain, rc,
                              [&](const RlStepMetrics& m, const CausalLM& a, const CausalLM& c) {
                                metrics << m.to_json().dump() << '\n';
                                metrics.flush();
                                const std::size_t every = config.rl.checkpoint_every;
                                if (m.step == rc.steps || (every > 0 && m.step % every == 0)) {
                                  save(m.step, m.terms.l_joint, a, c);
                                }
                              });
    metrics.close();
    if (last.empty()) save(0, 0.0, actor.lm(), critic);

    StageRecord rec;
    rec.seed = config.seeds.rl;
    rec.inputs[run_relative(layout.root, sft_ckpt / "parameters.bin")] = file_sha256(sft_ckpt / "parameters.bin");
    rec.inputs[run_relative(layout.root, reward_ckpt / "parameters.bin")] = file_sha256(reward_ckpt / "parameters.bin");
    rec.outputs = digest_tree(layout.root, dir);
    rec.details["final_checkpoint"] = run_relative(layout.root, dir / last);
    rec.details["steps"] = log.size();
    rec.details["pretrain_sequences"] = pretrain.size();
    std::size_t dropped = 0;
    for (const auto& m : log) dropped += m.dropped;
    rec.details["dropped_episodes"] = dropped;
    save_stage(config, manifest, "rl", std::move(rec));
  });
}

std::string cmd_optimize(const PipelineConfig& config, const std::string& prompt, TaskKind task) {
  const RunLayout layout{config.paths.run_dir};
  if (!fs::exists(layout.manifest())) {
    throw MissingUpstreamError("no run manifest in " + layout.root.string() + ": train a model first");
  }
  const auto manifest = RunManifest::load_or_create(layout.root, config_hash(config));
  const std::string stage = manifest.has("rl") ? "rl" : "sft";
  manifest.require(stage);
  const fs::path ckpt = final_checkpoint(manifest, layout.root, stage);
  if (!fs::exists(ckpt / "parameters.bin")) throw MissingUpstreamError("checkpoint missing: " + ckpt.string());
  const auto actor =
      PolicyHandle::from_model(PolicyRole::actor, std::make_shared<CausalLM>(load_checkpoint(ckpt)));
  return optimize_prompt(actor, task, prompt, config.eval.rewriter_params);
}

void cmd_eval(const PipelineConfig& config, const StageOptions& options) {
  const RunLayout layout{config.paths.run_dir};
  const fs::path dir = layout.eval_dir();
  auto manifest = RunManifest::load_or_create(layout.root, config_hash(config));
  for (const auto* s : {"warmup", "sft", "reward", "rl"}) {
    manifest.require(s);
    manifest.verify(layout.root, s);
  }
  const fs::path sft_ckpt = final_checkpoint(manifest, layout.root, "sft");
  const fs::path rl_ckpt = final_checkpoint(manifest, layout.root, "rl");
  const fs::path reward_ckpt = final_checkpoint(manifest, layout.root, "reward");
  manifest = begin_stage(config, "eval", options, dir);
  run_stage(dir, [&] {
    auto records = load_split(layout, "test");
    if (records.empty()) records = load_split(layout, "train");
    if (records.empty()) throw Error("no warm-up records to evaluate");
    const auto sft = PolicyHandle::from_model(PolicyRole::actor, std::make_shared<CausalLM>(load_checkpoint(sft_ckpt)));
    const auto rl = PolicyHandle::from_model(PolicyRole::actor, std::make_shared<CausalLM>(load_checkpoint(rl_ckpt)));
    const auto frozen = clone_frozen(sft);
    const auto reward = RewardModel::from_model(load_checkpoint(reward_ckpt));
    const auto target =
        PolicyHandle::from_text(PolicyRole::target_llm, make_text_model(config.endpoints.target, config.endpoints));

    // Datasets are evaluated separately, in order of first appearance.
    std::vector<std::pair<std::string, TaskKind>> keys;
    for (const auto& r : records) {
      const std::pair key{r.pair.dataset_name, r.pair.task};
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    std::vector<MetricReport> original_reports, sft_reports, rl_reports;
    std::vector<ImprovementRow> sft_rows, rl_rows;
    std::vector<PromptPair> sft_pairs, rl_pairs;
    std::vector<std::string> originals, rl_texts;
    nlohmann::json tests = nlohmann::json::object();
    for (const auto& [dataset, task] : keys) {
      std::vector<EvalRecord> orig_in, sft_in, rl_in;
      for (const auto& r : records) {
        if (r.pair.dataset_name != dataset || r.pair.task != task) continue;
        const std::string s = optimize_prompt(sft, task, r.pair.original, config.eval.rewriter_params);
        const std::string o = optimize_prompt(rl, task, r.pair.original, config.eval.rewriter_params);
        orig_in.push_back({r.pair.original, r.pair.reference_output});
        sft_in.push_back({s, r.pair.reference_output});
        rl_in.push_back({o, r.pair.reference_output});
        sft_pairs.push_back({r.pair.original, s, task, dataset, r.pair.reference_output, 0.0, 0.0});
        rl_pairs.push_back({r.pair.original, o, task, dataset, r.pair.reference_output, 0.0, 0.0});
        originals.push_back(r.pair.original);
        rl_texts.push_back(o);
      }
      original_reports.push_back(evaluate_prompts(target, orig_in, task, config.eval.target_params, dataset));
      sft_reports.push_back(evaluate_prompts(target, sft_in, task, config.eval.target_params, dataset));
      rl_reports.push_back(evaluate_prompts(target, rl_in, task, config.eval.target_params, dataset));
      sft_rows.push_back(compare_runs(original_reports.back(), sft_reports.back()));
      rl_rows.push_back(compare_runs(original_reports.back(), rl_reports.back()));
      if (orig_in.size() >= 2) {
        const auto t = paired_t_test(original_reports.back().scores, rl_reports.back().scores);
        tests[dataset] = {{"t", t.t}, {"degrees_of_freedom", t.degrees_of_freedom}, {"p_value", t.p_value}};
      }
    }

    const auto prompts = rl_prompts_from(records);
    const auto train_prompts = rl_prompts_from(load_split(layout, "train"));
    GenerationParams kl_params = config.rl.trainer.rollout_params;
    kl_params.seed = config.seeds.eval;
    nlohmann::json summary;
    summary["records"] = records.size();
    summary["reward_score"]["eval"] = {{"sft", mean_reward_score(sft, reward, prompts, config.eval.rewriter_params)},
                                       {"rl", mean_reward_score(rl, reward, prompts, config.eval.rewriter_params)}};
    if (!train_prompts.empty()) {
      summary["reward_score"]["train"] = {
          {"sft", mean_reward_score(sft, reward, train_prompts, config.eval.rewriter_params)},
          {"rl", mean_reward_score(rl, reward, train_prompts, config.eval.rewriter_params)}};
    }
    summary["kl_per_token"] = sampled_kl_per_token(rl, frozen, prompts, kl_params, config.eval.kl_samples);
    summary["edit_distance"] = {{"sft", mean_normalized_edit_distance(sft_pairs)},
                                {"rl", mean_normalized_edit_distance(rl_pairs)}};
    const auto words = word_frequency_report(originals, rl_texts, instruction_stoplist(), config.eval.top_k_words);
    summary["word_frequency"] = {{"original", words.original}, {"optimized", words.optimized}};
    summary["paired_t_test"] = tests;

    fs::create_directories(dir);
    write_file_atomic(dir / "report_original.csv", report_csv(original_reports));
    write_file_atomic(dir / "report_sft.csv", report_csv(sft_reports));
    write_file_atomic(dir / "report_rl.csv", report_csv(rl_reports));
    write_file_atomic(dir / "raw_scores_original.csv", raw_scores_csv(original_reports));
    write_file_atomic(dir / "raw_scores_sft.csv", raw_scores_csv(sft_reports));
    write_file_atomic(dir / "raw_scores_rl.csv", raw_scores_csv(rl_reports));
    write_file_atomic(dir / "improvement_sft.csv", improvement_csv(sft_rows));
    write_file_atomic(dir / "improvement_rl.csv", improvement_csv(rl_rows));
    write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");

    StageRecord rec;
    rec.seed = config.seeds.eval;
    rec.inputs[run_relative(layout.root, rl_ckpt / "parameters.bin")] = file_sha256(rl_ckpt / "parameters.bin");
    rec.outputs = digest_tree(layout.root, dir);
    rec.details = summary;
    save_stage(config, manifest, "eval", std::move(rec));
  });
}

}  // namespace mapo
