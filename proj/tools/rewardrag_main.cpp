// rewardrag: retrieval alignment pipeline driver.
//
// Stages write their artifacts under the workdir and record a manifest entry
// keyed by input and config hashes; rerunning an unchanged stage is a no-op.
// Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 upstream service
// failure, 5 numeric failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rewardrag/binio.hpp"
#include "rewardrag/chat.hpp"
#include "rewardrag/config.hpp"
#include "rewardrag/critic.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/evalkit.hpp"
#include "rewardrag/finetune.hpp"
#include "rewardrag/manifest.hpp"
#include "rewardrag/mining.hpp"
#include "rewardrag/raggen.hpp"
#include "rewardrag/reward.hpp"
#include "rewardrag/vecindex.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rewardrag;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string workdir;
  std::string corpus;
  std::string queries;
  std::string qrels;
  std::vector<std::string> sets;
  bool force = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "TOML-style config file");
  cmd->add_option("--workdir", args.workdir, "working directory for artifacts");
  cmd->add_option("--corpus", args.corpus, "corpus JSONL path");
  cmd->add_option("--queries", args.queries, "queries JSONL path");
  cmd->add_option("--qrels", args.qrels, "qrels TSV path");
  cmd->add_option("--set", args.sets, "override a config key, e.g. --set reward.lr=0.1")
      ->take_all();
  cmd->add_flag("--force", args.force, "rerun even if the stage is up to date");
}

config::PipelineConfig resolve_config(const CommonArgs& args) {
  config::KeyValueMap file_values;
  if (!args.config_path.empty()) {
    file_values = config::parse_config_file(args.config_path);
  }
  config::KeyValueMap overrides;
  for (const auto& kv : args.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got: " + kv);
    }
    overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!args.workdir.empty()) overrides["paths.workdir"] = args.workdir;
  if (!args.corpus.empty()) overrides["paths.corpus"] = args.corpus;
  if (!args.queries.empty()) overrides["paths.queries"] = args.queries;
  if (!args.qrels.empty()) overrides["paths.qrels"] = args.qrels;
  return config::PipelineConfig::resolve(file_values, overrides);
}

struct Paths {
  std::string workdir;
  std::string corpus;
  std::string queries;
  std::string qrels;

  std::string in_workdir(const std::string& name) const {
    return (fs::path(workdir) / name).string();
  }
};

Paths resolve_paths(const config::PipelineConfig& cfg) {
  Paths p;
  p.workdir = cfg.get("paths.workdir");
  fs::create_directories(p.workdir);
  p.corpus = cfg.get("paths.corpus").empty() ? p.in_workdir("corpus.jsonl")
                                             : cfg.get("paths.corpus");
  p.queries = cfg.get("paths.queries").empty() ? p.in_workdir("queries.jsonl")
                                               : cfg.get("paths.queries");
  p.qrels = cfg.get("paths.qrels").empty() ? p.in_workdir("qrels.tsv")
                                           : cfg.get("paths.qrels");
  return p;
}

// Which subcommand produces each workdir artifact, for actionable errors.
std::string producer_of(const std::string& path) {
  static const std::map<std::string, std::string> producers = {
      {"corpus.jsonl", "ingest or synth"}, {"queries.jsonl", "synth"},
      {"qrels.tsv", "synth"},              {"index.bin", "index"},
      {"pairs.jsonl", "sample"},           {"feedback.jsonl", "collect"},
      {"reward.ckpt", "train-reward"},     {"triples.jsonl", "mine"},
      {"adapter.ckpt", "train-encoder"},   {"composed.json", "train-encoder"},
      {"index_composed.bin", "eval-retrieval --encoder composed"},
      {"predictions.jsonl", "answer"},
  };
  auto it = producers.find(fs::path(path).filename().string());
  return it == producers.end() ? "" : it->second;
}

std::map<std::string, std::string> hash_inputs(const std::vector<std::string>& paths) {
  std::map<std::string, std::string> hashes;
  for (const auto& path : paths) {
    if (!fs::exists(path)) {
      std::string producer = producer_of(path);
      std::string hint =
          producer.empty() ? "" : " (produced by `rewardrag " + producer + "`)";
      throw MissingArtifactError("missing input artifact: " + path + hint);
    }
    hashes[path] = binio::hash_hex(binio::hash_file(path));
  }
  return hashes;
}

std::string api_key_or_env(const std::string& configured) {
  if (!configured.empty()) return configured;
  const char* env = std::getenv(chat::kApiKeyEnv);
  return env ? env : "";
}

embedding::EncoderSpec encoder_spec_from(const config::PipelineConfig& cfg) {
  embedding::EncoderSpec spec;
  spec.name = cfg.get("encoder.name");
  spec.dim = static_cast<std::size_t>(cfg.get_int("encoder.dim"));
  spec.pooling = embedding::pooling_from_string(cfg.get("encoder.pooling"));
  spec.query_instruction = cfg.get("encoder.query_instruction");
  spec.document_instruction = cfg.get("encoder.document_instruction");
  return spec;
}

embedding::EncoderOptions encoder_options_from(const config::PipelineConfig& cfg) {
  embedding::EncoderOptions options;
  options.http.base_url = cfg.get("encoder.http.base_url");
  options.http.model = cfg.get("encoder.http.model");
  options.http.api_key = api_key_or_env(cfg.get("encoder.http.api_key"));
  return options;
}

std::shared_ptr<embedding::TextEncoder> base_encoder_from(
    const config::PipelineConfig& cfg) {
  return embedding::make_encoder(encoder_spec_from(cfg), encoder_options_from(cfg));
}

std::shared_ptr<embedding::TextEncoder> composed_encoder_from(
    const config::PipelineConfig& cfg, const Paths& paths) {
  auto composed = finetune::load_composed_spec(paths.in_workdir("composed.json"));
  return finetune::make_composed_encoder(composed, encoder_options_from(cfg));
}

std::unique_ptr<chat::ChatClient> critic_client_from(
    const config::PipelineConfig& cfg) {
  const std::string mode = cfg.get("critic.mode");
  if (mode == "mock") {
    return std::make_unique<critic::MockCritic>(
        cfg.get_double("critic.overlap_threshold"));
  }
  if (mode == "http") {
    chat::HttpChatOptions options;
    options.url = cfg.get("critic.url");
    options.model = cfg.get("critic.model");
    options.api_key = api_key_or_env(cfg.get("critic.api_key"));
    options.temperature = 0.0;
    return std::make_unique<chat::HttpChatClient>(options);
  }
  throw ConfigError("critic.mode must be mock or http, got: " + mode);
}

/// Lock, cache check, run, manifest update. `body` performs the actual work.
template <typename Fn>
void run_stage(const std::string& stage, const Paths& paths,
               const std::vector<std::string>& input_paths,
               const std::vector<std::string>& outputs,
               const std::string& config_hash, bool force, Fn&& body) {
  manifest::WorkdirLock lock(paths.workdir);
  auto inputs = hash_inputs(input_paths);
  auto man = manifest::Manifest::load(paths.workdir);
  if (!force && man.up_to_date(stage, inputs, config_hash)) {
    std::cout << "[" << stage << "] up-to-date\n";
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  body();
  const auto t1 = std::chrono::steady_clock::now();

  manifest::StageRecord record;
  record.stage = stage;
  record.inputs = std::move(inputs);
  record.config_hash = config_hash;
  record.outputs = outputs;
  record.duration_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  record.finished_at = manifest::now_iso8601();
  man.put(std::move(record));
  man.save();
  std::cout << "[" << stage << "] done in "
            << static_cast<long>(record.duration_ms) << " ms\n";
}

struct PairLine {
  std::string query_id;
  std::string doc_id;
};

std::vector<PairLine> load_pairs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open pairs file: " + path);
  }
  std::vector<PairLine> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      pairs.push_back({j.at("query_id").get<std::string>(),
                       j.at("doc_id").get<std::string>()});
    } catch (const json::exception& e) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": bad pair line: " + e.what());
    }
  }
  return pairs;
}

std::map<std::string, const critic::QueryRecord*> queries_by_id(
    const std::vector<critic::QueryRecord>& queries) {
  std::map<std::string, const critic::QueryRecord*> by_id;
  for (const auto& q : queries) {
    by_id.emplace(q.query_id, &q);
  }
  return by_id;
}

double mean_top_reward(const vecindex::RetrievalIndex& index,
                       const embedding::TextEncoder& eval_encoder,
                       const embedding::TextEncoder& base_encoder,
                       const reward::RewardHeadParams& head,
                       const std::vector<critic::QueryRecord>& queries,
                       const vecindex::Corpus& corpus, int top_k) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& q : queries) {
    for (const auto& hit : vecindex::search(index, eval_encoder, q.text, top_k)) {
      const auto* doc = corpus.find(hit.doc_id);
      if (!doc) continue;
      auto pair = reward::embed_pair(base_encoder, q.text, doc->text);
      total += reward::reward_forward(pair, head).r;
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

void cmd_synth(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  finetune::SyntheticConfig sc;
  sc.n_topics = cfg.get_int("synth.n_topics");
  sc.docs_per_topic = cfg.get_int("synth.docs_per_topic");
  sc.queries_per_topic = cfg.get_int("synth.queries_per_topic");
  sc.vocab = cfg.get_int("synth.vocab");
  sc.noise = cfg.get_double("synth.noise");
  sc.seed = cfg.get_seed("synth.seed");

  run_stage("synth", paths, {}, {paths.corpus, paths.queries, paths.qrels},
            cfg.section_hash({"synth."}), force, [&]() {
              auto data = finetune::make_synthetic_dataset(sc);
              vecindex::save_corpus_jsonl(data.corpus, paths.corpus);
              critic::save_queries_jsonl(data.queries, paths.queries);
              evalkit::save_qrels_tsv(data.qrels, paths.qrels);
              std::cout << "synth: " << data.corpus.documents.size() << " docs, "
                        << data.queries.size() << " queries\n";
            });
}

void cmd_ingest(const config::PipelineConfig& cfg, const Paths& paths,
                const std::string& in_path, bool force) {
  if (in_path.empty()) {
    throw ConfigError("ingest: --in <corpus.jsonl> is required");
  }
  run_stage("ingest", paths, {in_path}, {paths.corpus},
            cfg.section_hash({"ingest."}), force, [&]() {
              vecindex::IngestStats stats;
              auto corpus = vecindex::load_corpus_jsonl(
                  in_path, cfg.get_bool("ingest.skip_bad"), &stats);
              vecindex::save_corpus_jsonl(corpus, paths.corpus);
              std::cout << "ingest: " << stats.accepted << " docs accepted, "
                        << stats.skipped << " skipped\n";
            });
}

void cmd_index(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage("index", paths, {paths.corpus}, {paths.in_workdir("index.bin")},
            cfg.section_hash({"encoder."}), force, [&]() {
              auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
              auto encoder = base_encoder_from(cfg);
              auto index = vecindex::build_index(corpus, *encoder,
                                                 cfg.get_int("encoder.threads"));
              vecindex::save_index(index, paths.in_workdir("index.bin"));
              std::cout << "index: " << index.size() << " entries, dim "
                        << index.encoder_spec.dim << "\n";
            });
}

void cmd_sample(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage(
      "sample", paths, {paths.corpus, paths.queries, paths.in_workdir("index.bin")},
      {paths.in_workdir("pairs.jsonl")},
      cfg.section_hash({"encoder.", "sample."}), force, [&]() {
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto index = vecindex::load_index(paths.in_workdir("index.bin"));
        auto encoder = base_encoder_from(cfg);
        critic::SampleOptions options;
        options.pool_k = cfg.get_int("sample.pool_k");
        options.extra_n = cfg.get_int("sample.extra_n");
        options.near_dup_ratio = cfg.get_double("sample.near_dup_ratio");
        const std::uint64_t base_seed = cfg.get_seed("sample.seed");

        std::ofstream out(paths.in_workdir("pairs.jsonl"));
        std::size_t n_pairs = 0;
        for (const auto& q : queries) {
          // Per-query stream, derived deterministically from the stage seed.
          options.seed = base_seed ^ binio::fnv1a64(q.query_id);
          for (const auto& doc_id :
               critic::sample_candidates(q, index, *encoder, options)) {
            json j;
            j["query_id"] = q.query_id;
            j["doc_id"] = doc_id;
            out << j.dump() << '\n';
            ++n_pairs;
          }
        }
        std::cout << "sample: " << n_pairs << " pairs for " << queries.size()
                  << " queries\n";
      });
}

void cmd_collect(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage(
      "collect", paths,
      {paths.corpus, paths.queries, paths.in_workdir("pairs.jsonl")},
      {paths.in_workdir("feedback.jsonl"), paths.in_workdir("rejects.jsonl")},
      cfg.section_hash({"critic."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto by_id = queries_by_id(queries);
        auto client = critic_client_from(cfg);

        std::vector<std::pair<critic::QueryRecord, std::string>> pairs;
        for (const auto& p : load_pairs_jsonl(paths.in_workdir("pairs.jsonl"))) {
          auto it = by_id.find(p.query_id);
          if (it == by_id.end()) {
            throw InvalidInputError("pairs reference unknown query_id " + p.query_id);
          }
          pairs.emplace_back(*it->second, p.doc_id);
        }

        critic::CollectOptions options;
        options.concurrency = cfg.get_int("critic.concurrency");
        options.retries = cfg.get_int("critic.retries");
        options.backoff_base_ms = cfg.get_int("critic.backoff_ms");
        options.style = critic::prompt_style_from_string(cfg.get("critic.style"));
        options.incontext_template_path = cfg.get("critic.template");

        auto result = critic::collect_feedback(pairs, corpus, *client, options);
        critic::save_feedback_jsonl(result.records,
                                    paths.in_workdir("feedback.jsonl"));
        critic::save_rejects_jsonl(result.rejects,
                                   paths.in_workdir("rejects.jsonl"));
        std::cout << "collect: " << result.records.size() << " records, "
                  << result.rejects.size() << " rejects\n";
      });
}

void cmd_train_reward(const config::PipelineConfig& cfg, const Paths& paths,
                      bool force) {
  run_stage(
      "train-reward", paths,
      {paths.corpus, paths.queries, paths.in_workdir("feedback.jsonl")},
      {paths.in_workdir("reward.ckpt"), paths.in_workdir("reward_loss.csv")},
      cfg.section_hash({"encoder.", "reward."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto feedback = critic::load_feedback_jsonl(paths.in_workdir("feedback.jsonl"));
        auto encoder = base_encoder_from(cfg);

        reward::LabelMap labels;
        labels.on0 = cfg.get_double("reward.label0");
        labels.on1 = cfg.get_double("reward.label1");
        labels.on2 = cfg.get_double("reward.label2");
        auto examples =
            reward::build_examples(feedback, queries, corpus, *encoder, labels);

        reward::TrainConfig tc;
        tc.lr = cfg.get_double("reward.lr");
        tc.epochs = cfg.get_int("reward.epochs");
        tc.batch_size = cfg.get_int("reward.batch_size");
        tc.seed = cfg.get_seed("reward.seed");
        tc.momentum = cfg.get_double("reward.momentum");
        tc.label_map = labels;
        tc.abort_checkpoint_path = paths.in_workdir("reward.lastgood.ckpt");

        auto result = reward::train_reward(
            examples, static_cast<std::size_t>(cfg.get_int("reward.k")),
            static_cast<std::size_t>(cfg.get_int("reward.h")), tc);
        reward::save_checkpoint(result.params, paths.in_workdir("reward.ckpt"));
        reward::save_loss_history_csv(result.epoch_loss,
                                      paths.in_workdir("reward_loss.csv"));
        std::cout << "train-reward: loss " << result.epoch_loss.front() << " -> "
                  << result.epoch_loss.back() << " over "
                  << result.epoch_loss.size() - 1 << " epochs\n";
      });
}

void cmd_score(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage(
      "score", paths,
      {paths.corpus, paths.queries, paths.in_workdir("pairs.jsonl"),
       paths.in_workdir("reward.ckpt")},
      {paths.in_workdir("scores.jsonl")}, cfg.section_hash({"encoder."}), force,
      [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto by_id = queries_by_id(queries);
        auto encoder = base_encoder_from(cfg);
        auto head = reward::load_checkpoint(paths.in_workdir("reward.ckpt"));

        std::vector<reward::ResolvedPair> resolved;
        for (const auto& p : load_pairs_jsonl(paths.in_workdir("pairs.jsonl"))) {
          auto it = by_id.find(p.query_id);
          if (it == by_id.end()) {
            throw InvalidInputError("pairs reference unknown query_id " + p.query_id);
          }
          const auto* doc = corpus.find(p.doc_id);
          if (!doc) {
            throw InvalidInputError("pairs reference unknown doc_id " + p.doc_id);
          }
          resolved.push_back({p.query_id, p.doc_id, it->second->text, doc->text});
        }

        auto scored = reward::score_pairs(resolved, *encoder, head);
        std::ofstream out(paths.in_workdir("scores.jsonl"));
        for (const auto& s : scored) {
          json j;
          j["query_id"] = s.query_id;
          j["doc_id"] = s.doc_id;
          j["reward"] = s.r;
          out << j.dump() << '\n';
        }
        std::cout << "score: " << scored.size() << " pairs scored\n";
      });
}

void cmd_mine(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage(
      "mine", paths,
      {paths.corpus, paths.queries, paths.in_workdir("index.bin"),
       paths.in_workdir("reward.ckpt")},
      {paths.in_workdir("triples.jsonl"), paths.in_workdir("skipped.jsonl")},
      cfg.section_hash({"encoder.", "mining."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto index = vecindex::load_index(paths.in_workdir("index.bin"));
        auto encoder = base_encoder_from(cfg);
        auto head = reward::load_checkpoint(paths.in_workdir("reward.ckpt"));

        mining::MiningConfig mc;
        mc.top_n = cfg.get_int("mining.top_n");
        mc.pos_threshold = cfg.get_double("mining.pos_threshold");
        mc.n_hard_neg = cfg.get_int("mining.n_hard_neg");
        mc.seed = cfg.get_seed("mining.seed");

        auto result = mining::mine_triples(queries, index, *encoder, head, corpus, mc);
        mining::save_triples_jsonl(result.triples, paths.in_workdir("triples.jsonl"));
        mining::save_skipped_jsonl(result.skipped, paths.in_workdir("skipped.jsonl"));
        std::cout << "mine: " << result.triples.size() << " triples, "
                  << result.skipped.size() << " skipped\n";
      });
}

void cmd_train_encoder(const config::PipelineConfig& cfg, const Paths& paths,
                       bool force) {
  run_stage(
      "train-encoder", paths,
      {paths.corpus, paths.queries, paths.in_workdir("triples.jsonl")},
      {paths.in_workdir("adapter.ckpt"), paths.in_workdir("adapter_loss.csv"),
       paths.in_workdir("composed.json")},
      cfg.section_hash({"encoder.", "finetune."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto triples = mining::load_triples_jsonl(paths.in_workdir("triples.jsonl"));
        auto encoder = base_encoder_from(cfg);

        finetune::AdapterTrainConfig tc;
        tc.lr = cfg.get_double("finetune.lr");
        tc.epochs = cfg.get_int("finetune.epochs");
        tc.batch_size = cfg.get_int("finetune.batch_size");
        tc.tau = cfg.get_double("finetune.tau");
        tc.seed = cfg.get_seed("finetune.seed");
        tc.abort_checkpoint_path = paths.in_workdir("adapter.lastgood.ckpt");

        auto result = finetune::train_adapter(triples, queries, corpus, *encoder, tc);
        finetune::save_adapter(result.params, paths.in_workdir("adapter.ckpt"));
        reward::save_loss_history_csv(result.epoch_loss,
                                      paths.in_workdir("adapter_loss.csv"));
        finetune::ComposedSpec composed;
        composed.base_spec = encoder_spec_from(cfg);
        composed.adapter_path = "adapter.ckpt";  // relative to composed.json
        finetune::save_composed_spec(composed, paths.in_workdir("composed.json"));
        std::cout << "train-encoder: loss " << result.epoch_loss.front() << " -> "
                  << result.epoch_loss.back() << " over " << result.epoch_loss.size()
                  << " epochs\n";
      });
}

void cmd_eval_retrieval(const config::PipelineConfig& cfg, const Paths& paths,
                        const std::string& encoder_choice, bool with_reward,
                        std::string out_name, bool force) {
  if (encoder_choice != "base" && encoder_choice != "composed") {
    throw ConfigError("--encoder must be base or composed, got: " + encoder_choice);
  }
  const bool composed = encoder_choice == "composed";
  if (out_name.empty()) {
    out_name = composed ? "eval_composed.json" : "eval_base.json";
  }

  std::vector<std::string> inputs = {paths.corpus, paths.queries, paths.qrels};
  std::vector<std::string> outputs = {paths.in_workdir(out_name)};
  if (composed) {
    inputs.push_back(paths.in_workdir("composed.json"));
    inputs.push_back(paths.in_workdir("adapter.ckpt"));
    outputs.push_back(paths.in_workdir("index_composed.bin"));
  } else {
    inputs.push_back(paths.in_workdir("index.bin"));
  }
  if (with_reward) {
    inputs.push_back(paths.in_workdir("reward.ckpt"));
  }

  run_stage(
      "eval-retrieval-" + encoder_choice, paths, inputs, outputs,
      cfg.section_hash({"encoder.", "eval."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);
        auto qrels = evalkit::load_qrels_tsv(paths.qrels);

        std::shared_ptr<embedding::TextEncoder> eval_encoder;
        vecindex::RetrievalIndex index;
        if (composed) {
          eval_encoder = composed_encoder_from(cfg, paths);
          index = vecindex::build_index(corpus, *eval_encoder,
                                        cfg.get_int("encoder.threads"));
          vecindex::save_index(index, paths.in_workdir("index_composed.bin"));
        } else {
          eval_encoder = base_encoder_from(cfg);
          index = vecindex::load_index(paths.in_workdir("index.bin"));
        }

        auto report =
            evalkit::evaluate_retrieval(index, *eval_encoder, queries, qrels,
                                        cfg.get("eval.metric"), cfg.get_int("eval.k"));
        if (with_reward) {
          auto base_encoder = base_encoder_from(cfg);
          auto head = reward::load_checkpoint(paths.in_workdir("reward.ckpt"));
          report.extras["mean_top5_reward"] = mean_top_reward(
              index, *eval_encoder, *base_encoder, head, queries, corpus, 5);
        }
        evalkit::save_report_json(report, paths.in_workdir(out_name));
        std::cout << "eval-retrieval[" << encoder_choice << "]: mean "
                  << report.metric << "@" << report.k << " = " << report.aggregate;
        if (with_reward) {
          std::cout << ", mean top-5 reward = " << report.extras["mean_top5_reward"];
        }
        std::cout << "\n";
      });
}

void cmd_answer(const config::PipelineConfig& cfg, const Paths& paths,
                const std::string& encoder_choice, bool force) {
  const bool composed = encoder_choice == "composed";
  std::vector<std::string> inputs = {paths.corpus, paths.queries};
  if (composed) {
    inputs.push_back(paths.in_workdir("composed.json"));
    inputs.push_back(paths.in_workdir("adapter.ckpt"));
  } else {
    inputs.push_back(paths.in_workdir("index.bin"));
  }

  run_stage(
      "answer", paths, inputs, {paths.in_workdir("predictions.jsonl")},
      cfg.section_hash({"encoder.", "qa."}), force, [&]() {
        auto corpus = vecindex::load_corpus_jsonl(paths.corpus);
        auto queries = critic::load_queries_jsonl(paths.queries);

        std::shared_ptr<embedding::TextEncoder> encoder;
        vecindex::RetrievalIndex index;
        if (composed) {
          encoder = composed_encoder_from(cfg, paths);
          index = vecindex::build_index(corpus, *encoder,
                                        cfg.get_int("encoder.threads"));
        } else {
          encoder = base_encoder_from(cfg);
          index = vecindex::load_index(paths.in_workdir("index.bin"));
        }

        chat::HttpChatOptions chat_options;
        chat_options.url = cfg.get("qa.url");
        chat_options.model = cfg.get("qa.model");
        chat_options.api_key = api_key_or_env(cfg.get("qa.api_key"));
        chat::HttpChatClient client(chat_options);

        raggen::AnswerOptions options;
        options.style = raggen::qa_style_from_string(cfg.get("qa.style"));
        options.k = cfg.get_int("qa.k");
        options.retries = cfg.get_int("qa.retries");
        options.backoff_base_ms = cfg.get_int("qa.backoff_ms");
        options.concurrency = cfg.get_int("qa.concurrency");

        auto results =
            raggen::answer_batch(queries, index, *encoder, corpus, client, options);

        auto by_id = queries_by_id(queries);
        std::ofstream out(paths.in_workdir("predictions.jsonl"));
        std::size_t n_ok = 0;
        for (const auto& r : results) {
          const auto& gold = by_id.at(r.query_id)->expert_answers;
          json j;
          j["query_id"] = r.query_id;
          j["prediction"] = r.ok ? json(r.prediction) : json(nullptr);
          j["gold"] = gold;
          j["em"] = (r.ok && !gold.empty())
                        ? json(evalkit::exact_match(r.prediction, gold))
                        : json(nullptr);
          j["passages"] = r.passage_ids;
          if (!r.ok) {
            j["failure_reason"] = r.failure_reason;
          }
          out << j.dump() << '\n';
          if (r.ok) ++n_ok;
        }
        std::cout << "answer: " << n_ok << "/" << results.size() << " answered\n";
      });
}

void cmd_eval_qa(const config::PipelineConfig& cfg, const Paths& paths, bool force) {
  run_stage(
      "eval-qa", paths, {paths.in_workdir("predictions.jsonl")},
      {paths.in_workdir("qa_eval.json")}, cfg.section_hash({"qa."}), force, [&]() {
        std::ifstream in(paths.in_workdir("predictions.jsonl"));
        std::size_t n = 0, n_failed = 0, n_scored = 0;
        double em_sum = 0.0, lenient_sum = 0.0;
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          json j = json::parse(line);
          ++n;
          if (j["prediction"].is_null()) {
            ++n_failed;
            continue;
          }
          std::vector<std::string> gold;
          for (const auto& g : j["gold"]) {
            gold.push_back(g.get<std::string>());
          }
          if (gold.empty()) continue;
          const std::string prediction = j["prediction"].get<std::string>();
          em_sum += evalkit::exact_match(prediction, gold);
          lenient_sum += evalkit::contains_match(prediction, gold);
          ++n_scored;
        }
        json report;
        report["n"] = n;
        report["n_failed"] = n_failed;
        report["n_scored"] = n_scored;
        report["em"] = n_scored ? em_sum / static_cast<double>(n_scored) : 0.0;
        report["acc_lenient"] =
            n_scored ? lenient_sum / static_cast<double>(n_scored) : 0.0;
        std::ofstream out(paths.in_workdir("qa_eval.json"));
        out << report.dump(2) << '\n';
        std::cout << "eval-qa: em " << report["em"] << ", acc-lenient "
                  << report["acc_lenient"] << " over " << n_scored << " queries\n";
      });
}

void cmd_agreement(const config::PipelineConfig& cfg, const Paths& paths,
                   const std::string& a_path, const std::string& b_path,
                   bool force) {
  if (a_path.empty() || b_path.empty()) {
    throw ConfigError("agreement: --a and --b feedback files are required");
  }
  run_stage(
      "agreement", paths, {a_path, b_path}, {paths.in_workdir("agreement.json")},
      cfg.section_hash({}), force, [&]() {
        auto a = critic::load_feedback_jsonl(a_path);
        auto b = critic::load_feedback_jsonl(b_path);
        auto m = critic::agreement(a, b);
        json j;
        j["counts"] = json::array();
        for (const auto& row : m.counts) {
          j["counts"].push_back(row);
        }
        j["total"] = m.total;
        j["agreement_percent"] = m.agreement_percent();
        std::ofstream out(paths.in_workdir("agreement.json"));
        out << j.dump(2) << '\n';
        std::cout << "agreement: " << m.agreement_percent() << "% over " << m.total
                  << " pairs\n";
      });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reward-aligned retrieval pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string ingest_in;
  std::string eval_encoder_choice = "base";
  std::string answer_encoder_choice = "base";
  bool eval_with_reward = false;
  std::string eval_out;
  std::string agreement_a, agreement_b;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* ingest = app.add_subcommand("ingest", "validate and normalize a corpus");
  ingest->add_option("--in", ingest_in, "input corpus JSONL")->required();
  auto* index = app.add_subcommand("index", "embed the corpus and build the index");
  auto* sample = app.add_subcommand("sample", "sample candidate pairs for rating");
  auto* collect = app.add_subcommand("collect", "collect critic feedback");
  auto* train_reward = app.add_subcommand("train-reward", "train the reward head");
  auto* score = app.add_subcommand("score", "score pairs with the reward head");
  auto* mine = app.add_subcommand("mine", "mine positive/hard-negative triples");
  auto* train_encoder =
      app.add_subcommand("train-encoder", "train the retrieval adapter");
  auto* eval_retrieval =
      app.add_subcommand("eval-retrieval", "evaluate retrieval quality");
  eval_retrieval->add_option("--encoder", eval_encoder_choice,
                             "base or composed (default base)");
  eval_retrieval->add_flag("--with-reward", eval_with_reward,
                           "also report mean top-5 reward");
  eval_retrieval->add_option("--out", eval_out, "report filename");
  auto* answer = app.add_subcommand("answer", "generate answers with RAG");
  answer->add_option("--encoder", answer_encoder_choice, "base or composed");
  auto* eval_qa = app.add_subcommand("eval-qa", "score predictions");
  auto* agreement = app.add_subcommand("agreement", "inter-critic agreement");
  agreement->add_option("--a", agreement_a, "first feedback JSONL");
  agreement->add_option("--b", agreement_b, "second feedback JSONL");

  for (auto* cmd : {synth, ingest, index, sample, collect, train_reward, score,
                    mine, train_encoder, eval_retrieval, answer, eval_qa,
                    agreement}) {
    add_common_options(cmd, args);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve_config(args);
    auto paths = resolve_paths(cfg);

    if (synth->parsed()) cmd_synth(cfg, paths, args.force);
    if (ingest->parsed()) cmd_ingest(cfg, paths, ingest_in, args.force);
    if (index->parsed()) cmd_index(cfg, paths, args.force);
    if (sample->parsed()) cmd_sample(cfg, paths, args.force);
    if (collect->parsed()) cmd_collect(cfg, paths, args.force);
    if (train_reward->parsed()) cmd_train_reward(cfg, paths, args.force);
    if (score->parsed()) cmd_score(cfg, paths, args.force);
    if (mine->parsed()) cmd_mine(cfg, paths, args.force);
    if (train_encoder->parsed()) cmd_train_encoder(cfg, paths, args.force);
    if (eval_retrieval->parsed()) {
      cmd_eval_retrieval(cfg, paths, eval_encoder_choice, eval_with_reward,
                         eval_out, args.force);
    }
    if (answer->parsed()) cmd_answer(cfg, paths, answer_encoder_choice, args.force);
    if (eval_qa->parsed()) cmd_eval_qa(cfg, paths, args.force);
    if (agreement->parsed()) {
      cmd_agreement(cfg, paths, agreement_a, agreement_b, args.force);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const TransportError& e) {
    std::cerr << "upstream service failure: " << e.what() << "\n";
    return 4;
  } catch (const EncoderError& e) {
    std::cerr << "encoder failure: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
