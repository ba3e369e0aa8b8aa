#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rewardrag/critic.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/reward.hpp"
#include "rewardrag/vecindex.hpp"

namespace rewardrag::mining {

/// One query with its reward-selected positive and retrieval-ordered hard
/// negatives. positive_reward >= threshold, every negative reward below it,
/// the positive never appears among the negatives, negatives distinct.
struct MinedTriple {
  std::string query_id;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;
  double positive_reward = 0.0;
  std::vector<double> negative_rewards;

  void validate(double pos_threshold) const;
};

struct SkippedQuery {
  std::string query_id;
  std::string reason;  // "no-positive" or "no-negatives"
};

struct MiningConfig {
  int top_n = 50;
  double pos_threshold = 0.75;
  int n_hard_neg = 5;
  std::uint64_t seed = 0;  // reserved; selection is deterministic
};

struct MiningResult {
  std::vector<MinedTriple> triples;   // sorted by query_id
  std::vector<SkippedQuery> skipped;  // sorted by query_id
};

/// Per query: retrieve top_n, score every pair with the reward head, pick the
/// highest-reward document at or above pos_threshold as the positive (ties by
/// doc_id), then the n_hard_neg highest-similarity documents below threshold
/// as hard negatives. Queries without a positive or without at least one
/// negative are reported, not emitted.
MiningResult mine_triples(const std::vector<critic::QueryRecord>& queries,
                          const vecindex::RetrievalIndex& index,
                          const embedding::TextEncoder& encoder,
                          const reward::RewardHeadParams& reward_params,
                          const vecindex::Corpus& corpus,
                          const MiningConfig& config);

std::vector<MinedTriple> load_triples_jsonl(const std::string& path);
void save_triples_jsonl(const std::vector<MinedTriple>& triples,
                        const std::string& path);
void save_skipped_jsonl(const std::vector<SkippedQuery>& skipped,
                        const std::string& path);

}  // namespace rewardrag::mining
