#include "rewardrag/raggen.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <thread>

#include "rewardrag/errors.hpp"

namespace rewardrag::raggen {

namespace {

constexpr const char* kQaSystem =
    R"(This is a chat between a user and an artificial intelligence assistant.
The assistant gives helpful, detailed, and polite answers to the user's questions.
The assistant is provided with 5 passages from Wikipedia.
If there isn't any related information in these passages, answer based on your knowledge.)";

constexpr const char* kShortAnswerTail =
    "Answer the query directly with the shortest phrase without explanation.\n"
    "If there are many correct answers, only output one of them.";

constexpr const char* kTrueFalseTail =
    "Answer directly the above query with True or False.";

constexpr std::size_t kPassageSlots = 5;

}  // namespace

QaStyle qa_style_from_string(const std::string& s) {
  if (s == "short-answer") return QaStyle::kShortAnswer;
  if (s == "true-false") return QaStyle::kTrueFalse;
  throw ConfigError("unknown QA style: " + s);
}

QaPrompt build_qa_prompt(const std::string& query,
                         const std::vector<std::string>& passages, QaStyle style) {
  if (passages.empty()) {
    throw InvalidInputError("build_qa_prompt: at least one passage is required");
  }
  QaPrompt prompt;
  prompt.style = style;
  prompt.system = kQaSystem;
  prompt.passages.reserve(kPassageSlots);
  for (std::size_t i = 0; i < kPassageSlots; ++i) {
    prompt.passages.push_back(i < passages.size() ? passages[i]
                                                  : kNoPassageSentinel);
  }
  std::string user;
  for (std::size_t i = 0; i < kPassageSlots; ++i) {
    user += "* Passage " + std::to_string(i + 1) + ": " + prompt.passages[i] + "\n";
  }
  user += "\nQuery: " + query + "\n";
  user += style == QaStyle::kShortAnswer ? kShortAnswerTail : kTrueFalseTail;
  prompt.user = user;
  return prompt;
}

std::string parse_short_answer(const std::string& raw_reply) {
  std::string line = raw_reply.substr(0, raw_reply.find('\n'));
  std::size_t b = line.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = line.find_last_not_of(" \t\r");
  line = line.substr(b, e - b + 1);
  if (!line.empty() && line.back() == '.') {
    line.pop_back();
  }
  return line;
}

std::optional<bool> parse_true_false(const std::string& raw_reply) {
  // First whitespace-delimited token, stripped of surrounding punctuation.
  std::size_t b = 0;
  while (b < raw_reply.size() &&
         std::isspace(static_cast<unsigned char>(raw_reply[b]))) {
    ++b;
  }
  std::size_t e = b;
  while (e < raw_reply.size() &&
         !std::isspace(static_cast<unsigned char>(raw_reply[e]))) {
    ++e;
  }
  std::string token = raw_reply.substr(b, e - b);
  while (!token.empty() && std::ispunct(static_cast<unsigned char>(token.front()))) {
    token.erase(token.begin());
  }
  while (!token.empty() && std::ispunct(static_cast<unsigned char>(token.back()))) {
    token.pop_back();
  }
  std::transform(token.begin(), token.end(), token.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (token == "true") return true;
  if (token == "false") return false;
  return std::nullopt;
}

AnswerResult answer(const critic::QueryRecord& query,
                    const vecindex::RetrievalIndex& index,
                    const embedding::TextEncoder& encoder,
                    const vecindex::Corpus& corpus, chat::ChatClient& client,
                    const AnswerOptions& options) {
  auto hits = vecindex::search(index, encoder, query.text, options.k);
  AnswerResult result;
  result.query_id = query.query_id;
  std::vector<std::string> passages;
  for (const auto& hit : hits) {
    const auto* doc = corpus.find(hit.doc_id);
    if (!doc) {
      throw InvalidStateError("answer: index doc_id " + hit.doc_id +
                              " missing from corpus");
    }
    result.passage_ids.push_back(hit.doc_id);
    passages.push_back(doc->text);
  }
  QaPrompt prompt = build_qa_prompt(query.text, passages, options.style);

  const int attempts = 1 + std::max(0, options.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && options.backoff_base_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          options.backoff_base_ms * (1LL << (attempt - 1))));
    }
    try {
      result.raw_response = client.complete(prompt.system, prompt.user);
    } catch (const TransportError& e) {
      result.failure_reason = "transport-failure";
      result.raw_response = e.what();
      continue;
    }
    if (options.style == QaStyle::kShortAnswer) {
      result.prediction = parse_short_answer(result.raw_response);
      result.ok = true;
      result.failure_reason.clear();
      return result;
    }
    auto value = parse_true_false(result.raw_response);
    if (!value) {
      result.failure_reason = "parse-failure";
      continue;
    }
    result.boolean = value;
    result.prediction = *value ? "true" : "false";
    result.ok = true;
    result.failure_reason.clear();
    return result;
  }
  result.prediction.clear();
  result.ok = false;
  return result;
}

std::vector<AnswerResult> answer_batch(
    const std::vector<critic::QueryRecord>& queries,
    const vecindex::RetrievalIndex& index, const embedding::TextEncoder& encoder,
    const vecindex::Corpus& corpus, chat::ChatClient& client,
    const AnswerOptions& options) {
  const std::size_t n = queries.size();
  std::vector<AnswerResult> results(n);
  const int concurrency =
      client.supports_concurrency() ? std::max(1, options.concurrency) : 1;
  if (concurrency == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      results[i] = answer(queries[i], index, encoder, corpus, client, options);
    }
    return results;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      results[i] = answer(queries[i], index, encoder, corpus, client, options);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(concurrency), n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back(worker);
  }
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace rewardrag::raggen
