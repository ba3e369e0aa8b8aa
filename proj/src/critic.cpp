#include "rewardrag/critic.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/rng.hpp"

using nlohmann::json;

namespace rewardrag::critic {

namespace {

// Appendix-style search-quality-rater instructions, used verbatim for the
// step-by-step prompt.
constexpr const char* kStepByStepSystem =
    R"(You are a search quality rater evaluating the relevance of web pages.
Given a query, a list of correct answers from experts, and a passage cut randomly from a web page, you must analyze the relevance between the query and web pages.
you must provide a score on an integer scale of 0 to 2 with the following meanings:
** 2 = highly relevant, provide the correct answer similar to experts with explanations, very helpful for this query.
** 1 = relevant, provide related information to query but can not find the correct answer
** 0 = not relevant, should never be shown for this query

Instructions
Split this problem into steps
** Understand the web page
- List all information can be extracted from the web page.
- Only consider information which was clearly mentioned.
- Do not imply or infer based on addition information in your knowledge.
- Do not manipulate.
** Understand the query
- Identify the main subject and intent of the query
- Focusing on specific details like "first," "most," or other qualifiers that define the query's focus.
** Consider different aspects:
- (match) Does the web page provide information related to the query? (0/1)
- (gt) Consider the list of correct answer, does the web page mention any correct answer explicitly with evidences? (0/1)
- (diff) If the web page does not mention explicitly any correct answer with evidences, does it provide another answer? (0/1)
- Note: a close answer to the correct answer is still wrong.
- Avoid subject mismatching: for example if the query asks about "The book thief" and the passage discusses about "The thief", it is different.
** Consider the aspects above, and decide on a final score. Final score must be an integer value only.

Your tasks
- Analyze webpage and query by step-by-step mentioned above
- From your analysis, make a final decision.
- Output format: a json contains 5 keys: "analyze": summary your analysis at most 4 sentences, "match": 0/1, "gt": 0/1, "diff": 0/1, "finalscore": 0/1/2)";

std::string join_answers(const std::vector<std::string>& answers) {
  std::string out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (i > 0) out += "; ";
    out += answers[i];
  }
  return out;
}

std::string lowercase(const std::string& s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Lowercased alphanumeric terms.
std::vector<std::string> terms_of(const std::string& s) {
  std::vector<std::string> terms;
  std::string cur;
  for (char c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

}  // namespace

std::vector<QueryRecord> load_queries_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open queries file: " + path);
  }
  std::vector<QueryRecord> queries;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      QueryRecord q;
      q.query_id = j.at("query_id").get<std::string>();
      q.text = j.at("text").get<std::string>();
      if (j.contains("expert_answers")) {
        for (const auto& a : j["expert_answers"]) {
          q.expert_answers.push_back(a.get<std::string>());
        }
      }
      if (q.text.empty()) {
        throw InvalidInputError("empty query text");
      }
      if (!seen.insert(q.query_id).second) {
        throw InvalidInputError("duplicate query_id " + q.query_id);
      }
      queries.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": bad query line: " + e.what());
    }
  }
  return queries;
}

void save_queries_jsonl(const std::vector<QueryRecord>& queries,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open queries file for writing: " + path);
  }
  for (const auto& q : queries) {
    json j;
    j["query_id"] = q.query_id;
    j["text"] = q.text;
    j["expert_answers"] = q.expert_answers;
    out << j.dump() << '\n';
  }
}

std::vector<FeedbackRecord> load_feedback_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open feedback file: " + path);
  }
  std::vector<FeedbackRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      FeedbackRecord r;
      r.query_id = j.at("query_id").get<std::string>();
      r.doc_id = j.at("doc_id").get<std::string>();
      r.analyze = j.value("analyze", "");
      r.match = j.at("match").get<int>();
      r.gt = j.at("gt").get<int>();
      r.diff = j.at("diff").get<int>();
      r.finalscore = j.at("finalscore").get<int>();
      r.critic_name = j.value("critic_name", "");
      r.raw_response = j.value("raw_response", "");
      r.consistency_warning = j.value("consistency_warning", false);
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": bad feedback line: " + e.what());
    }
  }
  return records;
}

void save_feedback_jsonl(const std::vector<FeedbackRecord>& records,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open feedback file for writing: " + path);
  }
  for (const auto& r : records) {
    json j;
    j["query_id"] = r.query_id;
    j["doc_id"] = r.doc_id;
    j["analyze"] = r.analyze;
    j["match"] = r.match;
    j["gt"] = r.gt;
    j["diff"] = r.diff;
    j["finalscore"] = r.finalscore;
    j["critic_name"] = r.critic_name;
    j["raw_response"] = r.raw_response;
    j["consistency_warning"] = r.consistency_warning;
    out << j.dump() << '\n';
  }
}

void save_rejects_jsonl(const std::vector<RejectRecord>& rejects,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open rejects file for writing: " + path);
  }
  for (const auto& r : rejects) {
    json j;
    j["query_id"] = r.query_id;
    j["doc_id"] = r.doc_id;
    j["reason"] = r.reason;
    j["raw_response"] = r.raw_response;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> sample_candidates(const QueryRecord& query,
                                           const vecindex::RetrievalIndex& index,
                                           const embedding::TextEncoder& encoder,
                                           const SampleOptions& options) {
  if (options.pool_k < 1 + options.extra_n) {
    throw InvalidInputError("sample_candidates: pool_k must be >= 1 + extra_n");
  }
  auto hits = vecindex::search(index, encoder, query.text, options.pool_k);
  if (hits.empty()) {
    throw InvalidStateError("sample_candidates: retrieval pool is empty");
  }

  std::vector<std::string> picked;
  picked.push_back(hits[0].doc_id);

  // Members scoring above near_dup_ratio * top are near-clones of the top
  // hit and are not sampled.
  const double cutoff = options.near_dup_ratio * hits[0].score;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 1; i < hits.size(); ++i) {
    if (hits[i].score <= cutoff) {
      eligible.push_back(i);
    }
  }

  const std::size_t draw =
      std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(options.extra_n));
  rng::Engine engine(options.seed);
  for (std::size_t pos : rng::sample_without_replacement(eligible.size(), draw, engine)) {
    picked.push_back(hits[eligible[pos]].doc_id);
  }
  return picked;
}

PromptStyle prompt_style_from_string(const std::string& s) {
  if (s == "step-by-step") return PromptStyle::kStepByStep;
  if (s == "in-context") return PromptStyle::kInContext;
  throw ConfigError("unknown prompt style: " + s);
}

PromptPair build_feedback_prompt(const QueryRecord& query,
                                 const std::string& passage, PromptStyle style,
                                 const std::string& incontext_template_path) {
  if (passage.empty()) {
    throw InvalidInputError("build_feedback_prompt: passage is empty");
  }
  PromptPair prompt;
  if (style == PromptStyle::kStepByStep) {
    prompt.system = kStepByStepSystem;
  } else {
    if (incontext_template_path.empty()) {
      throw ConfigError("in-context prompt style requires a template file");
    }
    std::ifstream in(incontext_template_path);
    if (!in) {
      throw ConfigError("cannot open in-context exemplar template: " +
                        incontext_template_path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    prompt.system = buf.str();
  }
  prompt.user = "* Passage: " + passage + "\n* Query: " + query.text +
                "\n* Correct answer: " + join_answers(query.expert_answers);
  return prompt;
}

std::optional<std::string> extract_json_block(const std::string& text) {
  std::size_t start = 0;
  while ((start = text.find('{', start)) != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        --depth;
        if (depth == 0) {
          std::string candidate = text.substr(start, i - start + 1);
          json parsed = json::parse(candidate, nullptr, false);
          if (!parsed.is_discarded() && parsed.is_object()) {
            return candidate;
          }
          break;  // balanced but unparseable; try the next '{'
        }
      }
    }
    ++start;
  }
  return std::nullopt;
}

namespace {

// Accepts JSON integers and booleans; anything else fails the contract.
bool read_binary_field(const json& j, const char* key, int max_value, int& out) {
  if (!j.contains(key)) return false;
  const json& v = j[key];
  if (v.is_boolean()) {
    out = v.get<bool>() ? 1 : 0;
  } else if (v.is_number_integer()) {
    out = v.get<int>();
  } else {
    return false;
  }
  return out >= 0 && out <= max_value;
}

struct ParsedFeedback {
  std::string analyze;
  int match = 0, gt = 0, diff = 0, finalscore = 0;
};

bool parse_feedback_response(const std::string& response, ParsedFeedback& out) {
  auto block = extract_json_block(response);
  if (!block) return false;
  json j = json::parse(*block, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!read_binary_field(j, "match", 1, out.match)) return false;
  if (!read_binary_field(j, "gt", 1, out.gt)) return false;
  if (!read_binary_field(j, "diff", 1, out.diff)) return false;
  // Out-of-range finalscore is never clamped; the pair is rejected.
  if (!read_binary_field(j, "finalscore", 2, out.finalscore)) return false;
  if (j.contains("analyze") && j["analyze"].is_string()) {
    out.analyze = j["analyze"].get<std::string>();
  }
  return true;
}

}  // namespace

CollectResult collect_feedback(
    const std::vector<std::pair<QueryRecord, std::string>>& pairs,
    const vecindex::Corpus& corpus, chat::ChatClient& client,
    const CollectOptions& options) {
  // Resolve every doc_id up front so bad input fails before any request.
  std::vector<const vecindex::Document*> docs;
  docs.reserve(pairs.size());
  for (const auto& [query, doc_id] : pairs) {
    const auto* doc = corpus.find(doc_id);
    if (!doc) {
      throw InvalidInputError("collect_feedback: unknown doc_id " + doc_id);
    }
    docs.push_back(doc);
  }

  const std::size_t n = pairs.size();
  std::vector<std::optional<FeedbackRecord>> records(n);
  std::vector<std::optional<RejectRecord>> rejects(n);

  auto process_one = [&](std::size_t i) {
    const auto& [query, doc_id] = pairs[i];
    PromptPair prompt = build_feedback_prompt(query, docs[i]->text, options.style,
                                              options.incontext_template_path);
    std::string last_response;
    std::string failure_reason;
    const int attempts = 1 + std::max(0, options.retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0 && options.backoff_base_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            options.backoff_base_ms * (1LL << (attempt - 1))));
      }
      try {
        last_response = client.complete(prompt.system, prompt.user);
      } catch (const TransportError& e) {
        failure_reason = "transport-failure";
        last_response = e.what();
        continue;
      }
      ParsedFeedback parsed;
      if (!parse_feedback_response(last_response, parsed)) {
        failure_reason = "parse-failure";
        continue;
      }
      FeedbackRecord record;
      record.query_id = query.query_id;
      record.doc_id = doc_id;
      record.analyze = parsed.analyze;
      record.match = parsed.match;
      record.gt = parsed.gt;
      record.diff = parsed.diff;
      record.finalscore = parsed.finalscore;
      record.critic_name = client.name();
      record.raw_response = last_response;
      record.consistency_warning = (parsed.gt == 1 && parsed.finalscore == 0);
      records[i] = std::move(record);
      return;
    }
    rejects[i] = RejectRecord{query.query_id, doc_id, failure_reason, last_response};
  };

  const int concurrency =
      client.supports_concurrency() ? std::max(1, options.concurrency) : 1;
  if (concurrency == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      process_one(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        process_one(i);
      }
    };
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(concurrency), n);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) t.join();
  }

  CollectResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i]) result.records.push_back(std::move(*records[i]));
    if (rejects[i]) result.rejects.push_back(std::move(*rejects[i]));
  }
  return result;
}

std::string MockCritic::complete(const std::string& /*system_msg*/,
                                 const std::string& user_msg) {
  auto slot = [&](const char* marker, const char* next_marker) -> std::string {
    std::size_t begin = user_msg.find(marker);
    if (begin == std::string::npos) return "";
    begin += std::strlen(marker);
    std::size_t end = next_marker ? user_msg.find(next_marker, begin)
                                  : std::string::npos;
    std::string value = end == std::string::npos
                            ? user_msg.substr(begin)
                            : user_msg.substr(begin, end - begin);
    while (!value.empty() && (value.back() == '\n' || value.back() == '\r')) {
      value.pop_back();
    }
    return value;
  };

  const std::string passage = slot("* Passage: ", "\n* Query: ");
  const std::string query = slot("* Query: ", "\n* Correct answer: ");
  const std::string answers_joined = slot("* Correct answer: ", nullptr);

  std::vector<std::string> answers;
  std::size_t pos = 0;
  while (pos <= answers_joined.size()) {
    std::size_t sep = answers_joined.find("; ", pos);
    std::string a = sep == std::string::npos ? answers_joined.substr(pos)
                                             : answers_joined.substr(pos, sep - pos);
    if (!a.empty()) answers.push_back(a);
    if (sep == std::string::npos) break;
    pos = sep + 2;
  }

  const std::string passage_lower = lowercase(passage);
  json reply;
  bool answered = false;
  for (const auto& a : answers) {
    if (passage_lower.find(lowercase(a)) != std::string::npos) {
      answered = true;
      break;
    }
  }
  if (answered) {
    reply = {{"analyze", "An expert answer appears verbatim in the passage."},
             {"match", 1},
             {"gt", 1},
             {"diff", 0},
             {"finalscore", 2}};
  } else {
    const auto query_terms = terms_of(query);
    std::set<std::string> distinct(query_terms.begin(), query_terms.end());
    std::set<std::string> passage_terms;
    for (auto& t : terms_of(passage)) {
      passage_terms.insert(std::move(t));
    }
    std::size_t shared = 0;
    for (const auto& t : distinct) {
      if (passage_terms.count(t)) ++shared;
    }
    const double overlap =
        distinct.empty() ? 0.0
                         : static_cast<double>(shared) /
                               static_cast<double>(distinct.size());
    std::ostringstream analysis;
    analysis << "No expert answer found; query-term overlap "
             << static_cast<int>(overlap * 100.0 + 0.5) << "%.";
    const bool related = overlap >= overlap_threshold_;
    reply = {{"analyze", analysis.str()},
             {"match", related ? 1 : 0},
             {"gt", 0},
             {"diff", 0},
             {"finalscore", related ? 1 : 0}};
  }
  return reply.dump();
}

int AgreementMatrix::trace() const {
  return counts[0][0] + counts[1][1] + counts[2][2];
}

double AgreementMatrix::agreement_percent() const {
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(trace()) / static_cast<double>(total);
}

AgreementMatrix agreement(const std::vector<FeedbackRecord>& a,
                          const std::vector<FeedbackRecord>& b) {
  auto key_of = [](const FeedbackRecord& r) {
    return std::make_pair(r.query_id, r.doc_id);
  };
  std::vector<std::size_t> ia(a.size()), ib(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ia[i] = i;
  for (std::size_t i = 0; i < b.size(); ++i) ib[i] = i;
  std::stable_sort(ia.begin(), ia.end(), [&](std::size_t x, std::size_t y) {
    return key_of(a[x]) < key_of(a[y]);
  });
  std::stable_sort(ib.begin(), ib.end(), [&](std::size_t x, std::size_t y) {
    return key_of(b[x]) < key_of(b[y]);
  });

  if (a.size() != b.size()) {
    throw InvalidInputError("agreement: record counts differ (" +
                            std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
  std::string missing;
  for (std::size_t i = 0; i < ia.size(); ++i) {
    const auto ka = key_of(a[ia[i]]);
    const auto kb = key_of(b[ib[i]]);
    if (ka != kb) {
      missing = "first mismatch at sorted position " + std::to_string(i) + ": (" +
                ka.first + ", " + ka.second + ") vs (" + kb.first + ", " +
                kb.second + ")";
      break;
    }
  }
  if (!missing.empty()) {
    throw InvalidInputError("agreement: key sets differ; " + missing);
  }

  AgreementMatrix m;
  for (std::size_t i = 0; i < ia.size(); ++i) {
    const int la = a[ia[i]].finalscore;
    const int lb = b[ib[i]].finalscore;
    if (la < 0 || la > 2 || lb < 0 || lb > 2) {
      throw InvalidInputError("agreement: finalscore outside 0..2");
    }
    ++m.counts[static_cast<std::size_t>(la)][static_cast<std::size_t>(lb)];
    ++m.total;
  }
  return m;
}

}  // namespace rewardrag::critic
