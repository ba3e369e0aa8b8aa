#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "rewardrag/critic.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/evalkit.hpp"

using namespace rewardrag;
using evalkit::Qrels;

namespace {

// Independent NDCG oracle: recompute gains and discounts directly.
double oracle_ndcg(const std::vector<std::string>& ranking,
                   const std::map<std::string, int>& row, int k) {
  auto dcg_of = [&](const std::vector<int>& rels) {
    double s = 0.0;
    for (std::size_t i = 0; i < rels.size() && i < static_cast<std::size_t>(k); ++i) {
      s += (std::pow(2.0, rels[i]) - 1.0) / (std::log(i + 2.0) / std::log(2.0));
    }
    return s;
  };
  std::vector<int> rels;
  for (const auto& id : ranking) {
    auto it = row.find(id);
    rels.push_back(it == row.end() ? 0 : it->second);
  }
  std::vector<int> ideal;
  for (const auto& [_, g] : row) ideal.push_back(g);
  std::sort(ideal.rbegin(), ideal.rend());
  const double idcg = dcg_of(ideal);
  return idcg > 0.0 ? dcg_of(rels) / idcg : 0.0;
}

// Hand-pickable encoder for exact ranking control in evaluate_retrieval tests.
class MappedEncoder final : public embedding::TextEncoder {
 public:
  MappedEncoder(std::map<std::string, std::vector<float>> table, std::size_t dim)
      : table_(std::move(table)) {
    spec_.name = "mapped";
    spec_.dim = dim;
  }
  const embedding::EncoderSpec& spec() const override { return spec_; }
  embedding::EncodedText encode(embedding::Role role,
                                const std::string& text) const override {
    embedding::EncodedText out;
    out.vector = table_.at(text);
    out.source_role = role;
    return out;
  }
  embedding::EncodedText encode_raw(const std::string& text) const override {
    return encode(embedding::Role::kQuery, text);
  }

 private:
  std::map<std::string, std::vector<float>> table_;
  embedding::EncoderSpec spec_;
};

}  // namespace

TEST_CASE("ideal ordering scores exactly 1") {
  std::map<std::string, int> row = {{"a", 3}, {"b", 2}, {"c", 1}, {"d", 0}};
  CHECK(evalkit::ndcg_at_k({"a", "b", "c", "d"}, row, 4) == 1.0);
}

TEST_CASE("all-zero grades score 0 by the IDCG convention") {
  std::map<std::string, int> row = {{"a", 0}, {"b", 0}};
  CHECK(evalkit::ndcg_at_k({"a", "b"}, row, 10) == 0.0);
  CHECK(evalkit::ndcg_at_k({"x", "y"}, {}, 10) == 0.0);
}

TEST_CASE("the [2,0,1] fixture matches the hand computation") {
  // DCG = 3/log2(2) + 0/log2(3) + 1/log2(4) = 3.5
  // IDCG = 3 + 1/log2(3) = 3.6309297535714575
  std::map<std::string, int> row = {{"first", 2}, {"third", 1}};
  const double got = evalkit::ndcg_at_k({"first", "second", "third"}, row, 3);
  CHECK(got == doctest::Approx(3.5 / 3.6309297535714575).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.96394).epsilon(1e-4));
}

TEST_CASE("ndcg agrees with the brute-force oracle on random instances") {
  std::mt19937_64 g(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(g() % 20);
    std::vector<std::string> ranking;
    std::map<std::string, int> row;
    for (int i = 0; i < n; ++i) {
      std::string id = "d" + std::to_string(i);
      ranking.push_back(id);
      if (g() % 3 != 0) {
        row[id] = static_cast<int>(g() % 4);
      }
    }
    // Judged documents that retrieval missed.
    for (int extra = 0; extra < static_cast<int>(g() % 3); ++extra) {
      row["missing" + std::to_string(extra)] = static_cast<int>(g() % 4);
    }
    std::shuffle(ranking.begin(), ranking.end(), g);
    const int k = 1 + static_cast<int>(g() % 12);
    CHECK(evalkit::ndcg_at_k(ranking, row, k) ==
          doctest::Approx(oracle_ndcg(ranking, row, k)).epsilon(1e-12));
  }
}

TEST_CASE("ndcg is invariant under permuting docs of equal grade") {
  std::map<std::string, int> row = {{"a", 2}, {"b", 2}, {"c", 1}, {"d", 0}};
  const double v1 = evalkit::ndcg_at_k({"a", "b", "c", "d"}, row, 4);
  const double v2 = evalkit::ndcg_at_k({"b", "a", "c", "d"}, row, 4);
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
}

TEST_CASE("moving a higher-graded doc earlier never lowers ndcg") {
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, int> row;
    std::vector<std::string> ranking;
    for (int i = 0; i < 8; ++i) {
      std::string id = "d" + std::to_string(i);
      ranking.push_back(id);
      row[id] = static_cast<int>(g() % 3);
    }
    std::shuffle(ranking.begin(), ranking.end(), g);
    const double before = evalkit::ndcg_at_k(ranking, row, 8);
    // Swap an adjacent out-of-order pair (lower grade directly above higher).
    for (std::size_t i = 0; i + 1 < ranking.size(); ++i) {
      if (row[ranking[i]] < row[ranking[i + 1]]) {
        std::swap(ranking[i], ranking[i + 1]);
        break;
      }
    }
    CHECK(evalkit::ndcg_at_k(ranking, row, 8) >= before - 1e-12);
  }
}

TEST_CASE("ndcg never exceeds 1") {
  std::mt19937_64 g(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> ranking;
    std::map<std::string, int> row;
    for (int i = 0; i < 10; ++i) {
      ranking.push_back("d" + std::to_string(i));
      row["d" + std::to_string(i)] = static_cast<int>(g() % 4);
    }
    std::shuffle(ranking.begin(), ranking.end(), g);
    CHECK(evalkit::ndcg_at_k(ranking, row, 10) <= 1.0 + 1e-12);
  }
}

TEST_CASE("recall at k") {
  std::map<std::string, int> all_rel = {{"a", 1}, {"b", 2}};
  CHECK(evalkit::recall_at_k({"a", "b"}, all_rel, 2) == 1.0);
  CHECK(evalkit::recall_at_k({"x", "y"}, all_rel, 2) == 0.0);
  CHECK(evalkit::recall_at_k({"a"}, {}, 5) == 0.0);

  // 7 relevant docs, 3 of them in the top 10.
  std::map<std::string, int> seven;
  for (int i = 0; i < 7; ++i) seven["rel" + std::to_string(i)] = 1;
  std::vector<std::string> ranking = {"rel0", "x1", "x2", "rel1", "x3",
                                      "x4",   "x5", "x6", "rel2", "x7"};
  CHECK(evalkit::recall_at_k(ranking, seven, 10) ==
        doctest::Approx(3.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("exact match normalization") {
  CHECK(evalkit::exact_match("Uruguay", {"Uruguay"}) == 1);
  CHECK(evalkit::exact_match("The White Rabbit!", {"white rabbit"}) == 1);
  CHECK(evalkit::exact_match("Germany", {"Uruguay"}) == 0);
  CHECK(evalkit::exact_match("an apple", {"Apple."}) == 1);
  CHECK(evalkit::exact_match("apple pie", {"apple"}) == 0);
  CHECK(evalkit::exact_match("  spaced   out  ", {"spaced out"}) == 1);
  CHECK(evalkit::exact_match("answer", {"gold one", "Answer"}) == 1);
}

TEST_CASE("lenient containment match") {
  CHECK(evalkit::contains_match("It was Uruguay, of course.", {"Uruguay"}) == 1);
  CHECK(evalkit::contains_match("Germany", {"Uruguay"}) == 0);
}

TEST_CASE("accuracy") {
  CHECK(evalkit::accuracy({"x", "y"}, {"x", "y"}) == 1.0);
  CHECK(evalkit::accuracy({"x", "y"}, {"a", "b"}) == 0.0);
  CHECK(evalkit::accuracy({"a", "b", "c", "d"}, {"a", "b", "c", "x"}) == 0.75);
  CHECK_THROWS_AS(evalkit::accuracy({"a"}, {"a", "b"}), InvalidInputError);
}

TEST_CASE("evaluate_retrieval lifts the ndcg examples to a report") {
  // Vectors chosen so each query ranks documents (d1, d2, d3) in that order.
  std::map<std::string, std::vector<float>> table = {
      {"doc one", {1, 0, 0}},   {"doc two", {0, 1, 0}}, {"doc three", {0, 0, 1}},
      {"query one", {3, 2, 1}}, {"query two", {3, 2, 1}}, {"query three", {3, 2, 1}},
  };
  MappedEncoder enc(std::move(table), 3);
  vecindex::Corpus corpus;
  corpus.documents = {{"d1", std::nullopt, "doc one"},
                      {"d2", std::nullopt, "doc two"},
                      {"d3", std::nullopt, "doc three"}};
  auto index = vecindex::build_index(corpus, enc);

  std::vector<critic::QueryRecord> queries = {
      {"q1", "query one", {}}, {"q2", "query two", {}}, {"q3", "query three", {}}};
  Qrels qrels;
  qrels.grades["q1"] = {{"d1", 2}, {"d3", 1}};          // grades in rank order 2,0,1
  qrels.grades["q2"] = {{"d1", 2}, {"d2", 1}};          // ideal -> 1.0
  // q3 absent: no judged docs -> 0.

  auto report = evalkit::evaluate_retrieval(index, enc, queries, qrels, "ndcg", 3);
  REQUIRE(report.per_query.size() == 3);
  const double expected_q1 = 3.5 / 3.6309297535714575;
  CHECK(report.per_query[0].second == doctest::Approx(expected_q1).epsilon(1e-12));
  CHECK(report.per_query[1].second == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.per_query[2].second == 0.0);
  const double mean = (expected_q1 + 1.0 + 0.0) / 3.0;
  CHECK(report.aggregate == doctest::Approx(mean).epsilon(1e-12));

  // Aggregate equals the arithmetic mean of the rows it reports.
  double sum = 0.0;
  for (const auto& [_, v] : report.per_query) sum += v;
  CHECK(report.aggregate ==
        doctest::Approx(sum / report.per_query.size()).epsilon(1e-12));
}

TEST_CASE("qrels TSV round-trip and validation") {
  Qrels qrels;
  qrels.grades["q1"] = {{"d1", 2}, {"d2", 0}};
  qrels.grades["q2"] = {{"d2", 1}};
  const auto path =
      (std::filesystem::temp_directory_path() / "rr_qrels.tsv").string();
  evalkit::save_qrels_tsv(qrels, path);
  auto loaded = evalkit::load_qrels_tsv(path);
  std::filesystem::remove(path);
  CHECK(loaded.grades == qrels.grades);
  CHECK(loaded.grade("q1", "d1") == 2);
  CHECK(loaded.grade("q1", "nope") == 0);

  vecindex::Corpus corpus;
  corpus.documents = {{"d1", std::nullopt, "x"}, {"d2", std::nullopt, "y"}};
  std::vector<critic::QueryRecord> queries = {{"q1", "a", {}}, {"q2", "b", {}}};
  CHECK_NOTHROW(loaded.validate(corpus, queries));

  Qrels bad;
  bad.grades["q1"] = {{"unknown", 1}};
  CHECK_THROWS_AS(bad.validate(corpus, queries), InvalidInputError);
}

TEST_CASE("report JSON round-trip") {
  evalkit::EvalReport report;
  report.metric = "ndcg";
  report.k = 10;
  report.encoder_id = "hash";
  report.per_query = {{"q1", 0.5}, {"q2", 1.0}};
  report.aggregate = 0.75;
  report.extras["mean_top5_reward"] = 0.42;
  const auto path =
      (std::filesystem::temp_directory_path() / "rr_report.json").string();
  evalkit::save_report_json(report, path);
  auto loaded = evalkit::load_report_json(path);
  std::filesystem::remove(path);
  CHECK(loaded.metric == report.metric);
  CHECK(loaded.k == report.k);
  CHECK(loaded.per_query == report.per_query);
  CHECK(loaded.aggregate == report.aggregate);
  CHECK(loaded.extras.at("mean_top5_reward") == 0.42);
}
