#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rewardrag/chat.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/vecindex.hpp"

namespace rewardrag::critic {

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::vector<std::string> expert_answers;
};

std::vector<QueryRecord> load_queries_jsonl(const std::string& path);
void save_queries_jsonl(const std::vector<QueryRecord>& queries,
                        const std::string& path);

/// One critic judgment for a (query, document) pair, recorded verbatim.
/// finalscore: 0 = not relevant, 1 = moderately relevant, 2 = highly relevant.
struct FeedbackRecord {
  std::string query_id;
  std::string doc_id;
  std::string analyze;
  int match = 0;
  int gt = 0;
  int diff = 0;
  int finalscore = 0;
  std::string critic_name;
  std::string raw_response;
  // Internally inconsistent output (gt=1 but finalscore=0) is kept, flagged.
  bool consistency_warning = false;
};

struct RejectRecord {
  std::string query_id;
  std::string doc_id;
  std::string reason;  // "parse-failure" or "transport-failure"
  std::string raw_response;
};

std::vector<FeedbackRecord> load_feedback_jsonl(const std::string& path);
void save_feedback_jsonl(const std::vector<FeedbackRecord>& records,
                         const std::string& path);
void save_rejects_jsonl(const std::vector<RejectRecord>& rejects,
                        const std::string& path);

// --------------------------------------------------------------------------
// Candidate sampling: keep the rank-1 hit, then draw extra_n documents
// uniformly (seeded partial Fisher-Yates) from pool members whose score is
// at most near_dup_ratio times the top score. Near-clones of the top hit are
// never sampled.
// --------------------------------------------------------------------------
struct SampleOptions {
  int pool_k = 25;
  int extra_n = 4;
  double near_dup_ratio = 0.95;
  std::uint64_t seed = 0;
};

std::vector<std::string> sample_candidates(const QueryRecord& query,
                                           const vecindex::RetrievalIndex& index,
                                           const embedding::TextEncoder& encoder,
                                           const SampleOptions& options);

// --------------------------------------------------------------------------
// Prompts
// --------------------------------------------------------------------------
enum class PromptStyle { kStepByStep, kInContext };

PromptStyle prompt_style_from_string(const std::string& s);

struct PromptPair {
  std::string system;
  std::string user;
};

/// The search-quality-rater prompt. Step-by-step style uses the built-in
/// system template; in-context style loads the exemplar template from
/// `incontext_template_path` (missing file -> ConfigError). The user message
/// fills the passage/query/answer slots; multiple expert answers are joined
/// with "; ".
PromptPair build_feedback_prompt(const QueryRecord& query,
                                 const std::string& passage, PromptStyle style,
                                 const std::string& incontext_template_path = "");

/// First balanced {...} block in `text` that parses as a JSON object,
/// tolerating surrounding prose and code fences. Quoted strings and escapes
/// inside the block are honored while balancing.
std::optional<std::string> extract_json_block(const std::string& text);

// --------------------------------------------------------------------------
// Collection
// --------------------------------------------------------------------------
struct CollectOptions {
  int concurrency = 4;
  int retries = 3;
  int backoff_base_ms = 1000;  // exponential: base * 2^attempt
  PromptStyle style = PromptStyle::kStepByStep;
  std::string incontext_template_path;
};

struct CollectResult {
  std::vector<FeedbackRecord> records;  // input order
  std::vector<RejectRecord> rejects;
};

/// One record per input pair. Pairs that still fail after retries become
/// reject records instead of being dropped. Clients that do not support
/// concurrency are driven single-threaded.
CollectResult collect_feedback(
    const std::vector<std::pair<QueryRecord, std::string>>& pairs,
    const vecindex::Corpus& corpus, chat::ChatClient& client,
    const CollectOptions& options);

// --------------------------------------------------------------------------
// Deterministic lexical-overlap critic for offline runs. Implements the chat
// interface: it parses the passage/query/answer slots back out of the user
// prompt and replies with the JSON the real critic is instructed to emit.
// Grade 2 when an expert answer appears verbatim in the passage, 1 when the
// distinct-query-term overlap is >= overlap_threshold, else 0.
// --------------------------------------------------------------------------
class MockCritic final : public chat::ChatClient {
 public:
  explicit MockCritic(double overlap_threshold = 0.30)
      : overlap_threshold_(overlap_threshold) {}

  std::string name() const override { return "mock-critic"; }
  bool supports_concurrency() const override { return false; }
  std::string complete(const std::string& system_msg,
                       const std::string& user_msg) override;

 private:
  double overlap_threshold_;
};

// --------------------------------------------------------------------------
// Agreement analytics
// --------------------------------------------------------------------------
struct AgreementMatrix {
  std::array<std::array<int, 3>, 3> counts{};  // [label_a][label_b]
  int total = 0;

  int trace() const;
  double agreement_percent() const;  // 100 * trace / total
};

/// Confusion matrix between two critics over the same (query_id, doc_id)
/// multiset. Key-set mismatch raises InvalidInputError naming missing keys.
AgreementMatrix agreement(const std::vector<FeedbackRecord>& a,
                          const std::vector<FeedbackRecord>& b);

}  // namespace rewardrag::critic
