#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rewardrag/chat.hpp"
#include "rewardrag/critic.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/vecindex.hpp"

namespace rewardrag::raggen {

enum class QaStyle { kShortAnswer, kTrueFalse };

QaStyle qa_style_from_string(const std::string& s);

/// Text used for passage slots beyond what retrieval returned.
inline constexpr const char* kNoPassageSentinel = "(no passage)";

struct QaPrompt {
  std::string system;
  std::string user;
  std::vector<std::string> passages;  // exactly 5, in rank order
  QaStyle style = QaStyle::kShortAnswer;
};

/// Five-passage QA template. Fewer than five passages pad with the sentinel;
/// zero passages are rejected (retrieval output is required).
QaPrompt build_qa_prompt(const std::string& query,
                         const std::vector<std::string>& passages, QaStyle style);

/// Trimmed first line with one trailing period stripped; no further cleanup.
std::string parse_short_answer(const std::string& raw_reply);

/// Case-insensitive "true"/"false" from the reply's first token; nullopt when
/// neither is found.
std::optional<bool> parse_true_false(const std::string& raw_reply);

struct AnswerResult {
  std::string query_id;
  std::string prediction;              // empty when !ok
  std::optional<bool> boolean;         // set for true-false style successes
  bool ok = false;
  std::string failure_reason;          // "parse-failure" or "transport-failure"
  std::vector<std::string> passage_ids;
  std::string raw_response;
};

struct AnswerOptions {
  QaStyle style = QaStyle::kShortAnswer;
  int k = 5;
  int retries = 3;
  int backoff_base_ms = 1000;
  int concurrency = 4;
};

/// Retrieve top-k, build the prompt, call the endpoint, parse the prediction.
/// Parse and transport failures become explicit failure records, never
/// fabricated predictions.
AnswerResult answer(const critic::QueryRecord& query,
                    const vecindex::RetrievalIndex& index,
                    const embedding::TextEncoder& encoder,
                    const vecindex::Corpus& corpus, chat::ChatClient& client,
                    const AnswerOptions& options);

/// Bounded-concurrency batch over answer(); order-preserving.
std::vector<AnswerResult> answer_batch(
    const std::vector<critic::QueryRecord>& queries,
    const vecindex::RetrievalIndex& index, const embedding::TextEncoder& encoder,
    const vecindex::Corpus& corpus, chat::ChatClient& client,
    const AnswerOptions& options);

}  // namespace rewardrag::raggen
