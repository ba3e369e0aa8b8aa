#pragma once

#include <map>
#include <string>
#include <vector>

#include "rewardrag/vecindex.hpp"

namespace rewardrag::critic {
struct QueryRecord;
}

namespace rewardrag::evalkit {

/// Graded relevance judgments: query_id -> doc_id -> grade (>= 0).
struct Qrels {
  std::map<std::string, std::map<std::string, int>> grades;

  int grade(const std::string& query_id, const std::string& doc_id) const;
  const std::map<std::string, int>* row(const std::string& query_id) const;

  /// Checks that every referenced id exists in the given corpus/query sets.
  void validate(const vecindex::Corpus& corpus,
                const std::vector<critic::QueryRecord>& queries) const;
};

Qrels load_qrels_tsv(const std::string& path);
void save_qrels_tsv(const Qrels& qrels, const std::string& path);

/// NDCG@k with exponential gain (2^rel - 1) and log2(i+1) discount.
/// Returns 0 when the row has no positive grades (IDCG = 0).
double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::map<std::string, int>& qrels_row, int k = 10);

/// |relevant docs in top-k| / |relevant docs|, relevant meaning grade >= 1.
/// Returns 0 when the row has no relevant docs.
double recall_at_k(const std::vector<std::string>& ranking,
                   const std::map<std::string, int>& qrels_row, int k);

/// Lowercase, strip punctuation, drop articles (a/an/the), collapse whitespace.
std::string normalize_answer(const std::string& s);

/// 1 iff the normalized prediction equals any normalized gold answer.
int exact_match(const std::string& prediction,
                const std::vector<std::string>& gold_answers);

/// Lenient QA accuracy: 1 iff any normalized gold answer is a substring of
/// the normalized prediction. Reported as "acc-lenient".
int contains_match(const std::string& prediction,
                   const std::vector<std::string>& gold_answers);

/// Fraction of positions where the lists agree. Lists must be equal length.
double accuracy(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds);

struct EvalReport {
  std::string metric;
  int k = 0;
  std::string encoder_id;
  std::string timestamp;  // left empty by the pipeline; timestamps live in manifests
  std::vector<std::pair<std::string, double>> per_query;
  double aggregate = 0.0;
  std::map<std::string, double> extras;
};

/// Runs search for every query and applies the named metric ("ndcg" or
/// "recall") at cutoff k. Queries absent from the qrels score 0.
EvalReport evaluate_retrieval(const vecindex::RetrievalIndex& index,
                              const embedding::TextEncoder& encoder,
                              const std::vector<critic::QueryRecord>& queries,
                              const Qrels& qrels, const std::string& metric,
                              int k);

void save_report_json(const EvalReport& report, const std::string& path);
EvalReport load_report_json(const std::string& path);

}  // namespace rewardrag::evalkit
