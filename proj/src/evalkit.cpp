#include "rewardrag/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "rewardrag/critic.hpp"
#include "rewardrag/errors.hpp"

using nlohmann::json;

namespace rewardrag::evalkit {

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
  auto qit = grades.find(query_id);
  if (qit == grades.end()) return 0;
  auto dit = qit->second.find(doc_id);
  return dit == qit->second.end() ? 0 : dit->second;
}

const std::map<std::string, int>* Qrels::row(const std::string& query_id) const {
  auto it = grades.find(query_id);
  return it == grades.end() ? nullptr : &it->second;
}

void Qrels::validate(const vecindex::Corpus& corpus,
                     const std::vector<critic::QueryRecord>& queries) const {
  std::unordered_set<std::string> query_ids;
  for (const auto& q : queries) {
    query_ids.insert(q.query_id);
  }
  for (const auto& [qid, row] : grades) {
    if (!query_ids.count(qid)) {
      throw InvalidInputError("qrels reference unknown query_id: " + qid);
    }
    for (const auto& [did, grade] : row) {
      if (grade < 0) {
        throw InvalidInputError("qrels grade < 0 for " + qid + "/" + did);
      }
      if (corpus.find(did) == nullptr) {
        throw InvalidInputError("qrels reference unknown doc_id: " + did);
      }
    }
  }
}

Qrels load_qrels_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open qrels file: " + path);
  }
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string qid, did, grade_str;
    if (!std::getline(row, qid, '\t') || !std::getline(row, did, '\t') ||
        !std::getline(row, grade_str, '\t')) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": expected query_id<TAB>doc_id<TAB>grade");
    }
    try {
      qrels.grades[qid][did] = std::stoi(grade_str);
    } catch (const std::exception&) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": grade is not an integer: " + grade_str);
    }
  }
  return qrels;
}

void save_qrels_tsv(const Qrels& qrels, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open qrels file for writing: " + path);
  }
  for (const auto& [qid, row] : qrels.grades) {
    for (const auto& [did, grade] : row) {
      out << qid << '\t' << did << '\t' << grade << '\n';
    }
  }
}

namespace {

double gain(int rel) { return std::pow(2.0, rel) - 1.0; }

double dcg(const std::vector<int>& rels_in_rank_order, int k) {
  double total = 0.0;
  const std::size_t top =
      std::min<std::size_t>(rels_in_rank_order.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < top; ++i) {
    total += gain(rels_in_rank_order[i]) /
             std::log2(static_cast<double>(i) + 2.0);
  }
  return total;
}

}  // namespace

double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::map<std::string, int>& qrels_row, int k) {
  if (k < 1) {
    throw InvalidInputError("ndcg_at_k: k must be >= 1");
  }
  std::vector<int> rels;
  rels.reserve(ranking.size());
  for (const auto& id : ranking) {
    auto it = qrels_row.find(id);
    rels.push_back(it == qrels_row.end() ? 0 : it->second);
  }
  std::vector<int> ideal;
  ideal.reserve(qrels_row.size());
  for (const auto& [_, grade] : qrels_row) {
    ideal.push_back(grade);
  }
  std::sort(ideal.begin(), ideal.end(), std::greater<int>());
  const double idcg = dcg(ideal, k);
  if (idcg <= 0.0) {
    return 0.0;
  }
  return dcg(rels, k) / idcg;
}

double recall_at_k(const std::vector<std::string>& ranking,
                   const std::map<std::string, int>& qrels_row, int k) {
  if (k < 1) {
    throw InvalidInputError("recall_at_k: k must be >= 1");
  }
  std::size_t relevant = 0;
  for (const auto& [_, grade] : qrels_row) {
    if (grade >= 1) ++relevant;
  }
  if (relevant == 0) {
    return 0.0;
  }
  std::size_t found = 0;
  const std::size_t top =
      std::min<std::size_t>(ranking.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < top; ++i) {
    auto it = qrels_row.find(ranking[i]);
    if (it != qrels_row.end() && it->second >= 1) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(relevant);
}

std::string normalize_answer(const std::string& s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (char c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) {
      lowered.push_back(' ');
    } else {
      lowered.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  std::istringstream words(lowered);
  std::string word, out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

int exact_match(const std::string& prediction,
                const std::vector<std::string>& gold_answers) {
  const std::string norm_pred = normalize_answer(prediction);
  for (const auto& gold : gold_answers) {
    if (norm_pred == normalize_answer(gold)) return 1;
  }
  return 0;
}

int contains_match(const std::string& prediction,
                   const std::vector<std::string>& gold_answers) {
  const std::string norm_pred = normalize_answer(prediction);
  for (const auto& gold : gold_answers) {
    const std::string g = normalize_answer(gold);
    if (!g.empty() && norm_pred.find(g) != std::string::npos) return 1;
  }
  return 0;
}

double accuracy(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds) {
  if (predictions.size() != golds.size()) {
    throw InvalidInputError("accuracy: prediction/gold lists differ in length");
  }
  if (predictions.empty()) {
    throw InvalidInputError("accuracy: empty lists");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == golds[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

EvalReport evaluate_retrieval(const vecindex::RetrievalIndex& index,
                              const embedding::TextEncoder& encoder,
                              const std::vector<critic::QueryRecord>& queries,
                              const Qrels& qrels, const std::string& metric,
                              int k) {
  if (metric != "ndcg" && metric != "recall") {
    throw ConfigError("unknown retrieval metric: " + metric);
  }
  EvalReport report;
  report.metric = metric;
  report.k = k;
  report.encoder_id = encoder.spec().name;
  static const std::map<std::string, int> kEmptyRow;
  double sum = 0.0;
  for (const auto& q : queries) {
    auto hits = vecindex::search(index, encoder, q.text, k);
    std::vector<std::string> ranking;
    ranking.reserve(hits.size());
    for (const auto& h : hits) {
      ranking.push_back(h.doc_id);
    }
    const auto* row = qrels.row(q.query_id);
    const auto& grades = row ? *row : kEmptyRow;
    const double value = metric == "ndcg" ? ndcg_at_k(ranking, grades, k)
                                          : recall_at_k(ranking, grades, k);
    report.per_query.emplace_back(q.query_id, value);
    sum += value;
  }
  report.aggregate =
      queries.empty() ? 0.0 : sum / static_cast<double>(queries.size());
  return report;
}

void save_report_json(const EvalReport& report, const std::string& path) {
  json j;
  j["metadata"] = {{"metric", report.metric},
                   {"k", report.k},
                   {"encoder", report.encoder_id},
                   {"timestamp", report.timestamp}};
  j["per_query"] = json::array();
  for (const auto& [qid, value] : report.per_query) {
    j["per_query"].push_back({{"query_id", qid}, {"value", value}});
  }
  j["aggregate"] = report.aggregate;
  for (const auto& [key, value] : report.extras) {
    j["extras"][key] = value;
  }
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open report file for writing: " + path);
  }
  out << j.dump(2) << '\n';
}

EvalReport load_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open report file: " + path);
  }
  json j = json::parse(in);
  EvalReport report;
  report.metric = j["metadata"].value("metric", "");
  report.k = j["metadata"].value("k", 0);
  report.encoder_id = j["metadata"].value("encoder", "");
  report.timestamp = j["metadata"].value("timestamp", "");
  for (const auto& row : j["per_query"]) {
    report.per_query.emplace_back(row["query_id"].get<std::string>(),
                                  row["value"].get<double>());
  }
  report.aggregate = j["aggregate"].get<double>();
  if (j.contains("extras")) {
    for (auto it = j["extras"].begin(); it != j["extras"].end(); ++it) {
      report.extras[it.key()] = it.value().get<double>();
    }
  }
  return report;
}

}  // namespace rewardrag::evalkit
