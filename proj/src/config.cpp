#include "rewardrag/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "rewardrag/binio.hpp"
#include "rewardrag/errors.hpp"

namespace rewardrag::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

KeyValueMap parse_config_text(const std::string& content,
                              const std::string& origin) {
  KeyValueMap out;
  std::istringstream in(content);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = t.substr(eq + 1);
    // Strip a trailing comment outside quotes.
    bool in_quotes = false;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (value[i] == '"') in_quotes = !in_quotes;
      if (value[i] == '#' && !in_quotes) {
        value = value.substr(0, i);
        break;
      }
    }
    value = unquote(trim(value));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

KeyValueMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

const KeyValueMap& default_config() {
  static const KeyValueMap defaults = {
      {"paths.corpus", ""},   // empty means <workdir>/corpus.jsonl
      {"paths.queries", ""},  // empty means <workdir>/queries.jsonl
      {"paths.qrels", ""},    // empty means <workdir>/qrels.tsv
      {"paths.workdir", "work"},

      {"ingest.skip_bad", "false"},

      {"encoder.name", "hash"},
      {"encoder.dim", "256"},
      {"encoder.pooling", "mean"},
      {"encoder.query_instruction", ""},
      {"encoder.document_instruction", ""},
      {"encoder.threads", "1"},
      {"encoder.http.base_url", ""},
      {"encoder.http.model", ""},
      {"encoder.http.api_key", ""},

      {"sample.pool_k", "25"},
      {"sample.extra_n", "4"},
      {"sample.near_dup_ratio", "0.95"},
      {"sample.seed", "1"},

      {"critic.mode", "mock"},  // mock | http
      {"critic.style", "step-by-step"},
      {"critic.url", ""},
      {"critic.model", ""},
      {"critic.api_key", ""},
      {"critic.concurrency", "4"},
      {"critic.retries", "3"},
      {"critic.backoff_ms", "1000"},
      {"critic.template", ""},
      {"critic.overlap_threshold", "0.3"},

      {"reward.k", "4"},
      {"reward.h", "0"},  // 0 resolves to encoder.dim
      {"reward.lr", "0.05"},
      {"reward.epochs", "200"},
      {"reward.batch_size", "16"},
      {"reward.seed", "1"},
      {"reward.momentum", "0"},
      {"reward.label0", "0"},
      {"reward.label1", "0.5"},
      {"reward.label2", "1"},

      {"mining.top_n", "50"},
      {"mining.pos_threshold", "0.75"},
      {"mining.n_hard_neg", "5"},
      {"mining.seed", "1"},

      {"finetune.tau", "0.01"},
      {"finetune.lr", "0.001"},
      {"finetune.epochs", "40"},
      {"finetune.batch_size", "16"},
      {"finetune.seed", "1"},

      {"eval.metric", "ndcg"},
      {"eval.k", "10"},

      {"qa.style", "short-answer"},
      {"qa.url", ""},
      {"qa.model", ""},
      {"qa.api_key", ""},
      {"qa.k", "5"},
      {"qa.concurrency", "4"},
      {"qa.retries", "3"},
      {"qa.backoff_ms", "1000"},

      {"synth.n_topics", "50"},
      {"synth.docs_per_topic", "40"},
      {"synth.queries_per_topic", "4"},
      {"synth.vocab", "300"},
      {"synth.noise", "0.25"},
      {"synth.seed", "1"},
  };
  return defaults;
}

PipelineConfig PipelineConfig::resolve(const KeyValueMap& file_values,
                                       const KeyValueMap& overrides) {
  const KeyValueMap& defaults = default_config();
  auto check_known = [&](const KeyValueMap& kv, const char* source) {
    for (const auto& [key, _] : kv) {
      if (!defaults.count(key)) {
        throw ConfigError(std::string("unknown config key (") + source +
                          "): " + key);
      }
    }
  };
  check_known(file_values, "file");
  check_known(overrides, "override");

  PipelineConfig cfg;
  cfg.values_ = defaults;
  for (const auto& [key, value] : file_values) {
    cfg.values_[key] = value;
  }
  for (const auto& [key, value] : overrides) {
    cfg.values_[key] = value;
  }
  // Materialize the documented "h defaults to the model width" rule.
  if (cfg.values_["reward.h"] == "0") {
    cfg.values_["reward.h"] = cfg.values_["encoder.dim"];
  }
  return cfg;
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown config key: " + key);
  }
  return it->second;
}

int PipelineConfig::get_int(const std::string& key) const {
  const std::string& raw = get(key);
  try {
    std::size_t used = 0;
    int v = std::stoi(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got \"" + raw + "\"");
  }
}

double PipelineConfig::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  try {
    std::size_t used = 0;
    double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got \"" + raw + "\"");
  }
}

bool PipelineConfig::get_bool(const std::string& key) const {
  const std::string& raw = get(key);
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw ConfigError(key + ": expected true/false, got \"" + raw + "\"");
}

std::uint64_t PipelineConfig::get_seed(const std::string& key) const {
  const std::string& raw = get(key);
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got \"" + raw +
                      "\"");
  }
}

std::string PipelineConfig::section_hash(
    const std::vector<std::string>& prefixes) const {
  std::uint64_t h = binio::kFnvOffset;
  for (const auto& [key, value] : values_) {  // std::map keeps keys sorted
    if (key.size() >= 8 && key.rfind(".api_key") == key.size() - 8) continue;
    bool match = false;
    for (const auto& prefix : prefixes) {
      if (key.rfind(prefix, 0) == 0) {
        match = true;
        break;
      }
    }
    if (!match) continue;
    h = binio::fnv1a64(key, h);
    h = binio::fnv1a64("=", h);
    h = binio::fnv1a64(value, h);
    h = binio::fnv1a64("\n", h);
  }
  return binio::hash_hex(h);
}

}  // namespace rewardrag::config
