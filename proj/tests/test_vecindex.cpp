#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "rewardrag/embedding.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/vecindex.hpp"

using namespace rewardrag;
using embedding::Pooling;
using embedding::Role;
using vecindex::Corpus;
using vecindex::Document;

namespace {

embedding::EncoderSpec hash_spec(std::size_t dim) {
  embedding::EncoderSpec spec;
  spec.name = "hash";
  spec.dim = dim;
  spec.pooling = Pooling::kMean;
  return spec;
}

Corpus tiny_corpus() {
  Corpus c;
  c.documents = {{"a", std::nullopt, "the quick brown fox"},
                 {"b", "title b", "jumps over the lazy dog"},
                 {"c", std::nullopt, "pack my box with five dozen jugs"}};
  return c;
}

// Deterministic word-salad corpus.
Corpus random_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  static const char* kWords[] = {"alpha", "beta",  "gamma", "delta", "epsilon",
                                 "zeta",  "eta",   "theta", "iota",  "kappa",
                                 "mu",    "nu",    "xi",    "omega", "sigma"};
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const std::size_t len = 3 + g() % 10;
    for (std::size_t w = 0; w < len; ++w) {
      if (w > 0) text.push_back(' ');
      text += kWords[g() % 15];
    }
    char id[16];
    std::snprintf(id, sizeof(id), "doc%04zu", i);
    c.documents.push_back({id, std::nullopt, text});
  }
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Brute force per the similarity formula, independent of the index code path.
std::vector<std::pair<std::string, double>> oracle_topk(
    const Corpus& corpus, const embedding::TextEncoder& enc,
    const std::string& query, std::size_t k) {
  auto qv = enc.encode(Role::kQuery, query).vector;
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& d : corpus.documents) {
    auto dv = enc.encode(Role::kDocument, d.text).vector;
    double dot = 0.0, nq = 0.0, nd = 0.0;
    for (std::size_t i = 0; i < qv.size(); ++i) {
      dot += static_cast<double>(qv[i]) * dv[i];
      nq += static_cast<double>(qv[i]) * qv[i];
      nd += static_cast<double>(dv[i]) * dv[i];
    }
    scored.emplace_back(d.doc_id, dot / (std::sqrt(nq) * std::sqrt(nd)));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

}  // namespace

TEST_CASE("index has one entry per document with the declared dim") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  CHECK(index.size() == 3);
  CHECK(index.matrix.size() == 3 * 8);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(index.vector_of(i).size() == 8);
  }
}

TEST_CASE("building twice is bitwise identical, on disk too") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto corpus = random_corpus(40, 7);
  auto i1 = vecindex::build_index(corpus, *enc);
  auto i2 = vecindex::build_index(corpus, *enc);
  CHECK(i1.matrix == i2.matrix);
  CHECK(i1.doc_ids == i2.doc_ids);

  const auto p1 = temp_path("rr_idx_a.bin");
  const auto p2 = temp_path("rr_idx_b.bin");
  vecindex::save_index(i1, p1);
  vecindex::save_index(i2, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("parallel build matches serial build") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto corpus = random_corpus(101, 3);
  auto serial = vecindex::build_index(corpus, *enc, 1);
  auto parallel = vecindex::build_index(corpus, *enc, 4);
  CHECK(serial.matrix == parallel.matrix);
  CHECK(serial.doc_ids == parallel.doc_ids);
}

TEST_CASE("index vectors equal standalone encode calls") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto corpus = random_corpus(100, 11);
  auto index = vecindex::build_index(corpus, *enc);
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    auto expected = enc->encode(Role::kDocument, corpus.documents[i].text).vector;
    auto row = index.vector_of(i);
    REQUIRE(row.size() == expected.size());
    for (std::size_t d = 0; d < expected.size(); ++d) {
      CHECK(row[d] == expected[d]);
    }
  }
}

TEST_CASE("empty corpus is rejected") {
  auto enc = embedding::make_encoder(hash_spec(8));
  CHECK_THROWS_AS(vecindex::build_index(Corpus{}, *enc), InvalidInputError);
}

TEST_CASE("k larger than the corpus returns exactly N hits") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  auto hits = vecindex::search(index, *enc, "quick fox", 50);
  CHECK(hits.size() == 3);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    CHECK(hits[i].rank == static_cast<int>(i) + 1);
  }
}

TEST_CASE("a query equal to a document text lands at rank 1 with score 1") {
  auto enc = embedding::make_encoder(hash_spec(32));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  auto hits = vecindex::search(index, *enc, "jumps over the lazy dog", 3);
  REQUIRE(!hits.empty());
  CHECK(hits[0].doc_id == "b");
  CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("search equals the brute-force oracle on a 200-doc corpus") {
  auto enc = embedding::make_encoder(hash_spec(24));
  auto corpus = random_corpus(200, 99);
  auto index = vecindex::build_index(corpus, *enc);
  std::mt19937_64 g(5);
  static const char* kQueries[] = {"alpha beta", "omega", "mu nu xi",
                                   "kappa theta iota", "delta epsilon zeta"};
  for (const char* q : kQueries) {
    auto hits = vecindex::search(index, *enc, q, 10);
    auto expected = oracle_topk(corpus, *enc, q, 10);
    REQUIRE(hits.size() == expected.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].doc_id == expected[i].first);
      CHECK(hits[i].score == doctest::Approx(expected[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("ties break by doc_id ascending") {
  Corpus c;
  c.documents = {{"z", std::nullopt, "same text"},
                 {"m", std::nullopt, "same text"},
                 {"a", std::nullopt, "same text"},
                 {"k", std::nullopt, "other words entirely"}};
  auto enc = embedding::make_encoder(hash_spec(16));
  auto index = vecindex::build_index(c, *enc);
  auto hits = vecindex::search(index, *enc, "same text", 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].doc_id == "a");
  CHECK(hits[1].doc_id == "m");
  CHECK(hits[2].doc_id == "z");
}

TEST_CASE("k < 1 is rejected") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  CHECK_THROWS_AS(vecindex::search(index, *enc, "fox", 0), InvalidInputError);
}

TEST_CASE("save/load round-trip preserves search results") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  const auto path = temp_path("rr_roundtrip.bin");
  vecindex::save_index(index, path);
  auto loaded = vecindex::load_index(path);
  std::filesystem::remove(path);

  CHECK(loaded.encoder_spec == index.encoder_spec);
  CHECK(loaded.metadata.corpus_hash == index.metadata.corpus_hash);
  auto before = vecindex::search(index, *enc, "brown fox", 3);
  auto after = vecindex::search(loaded, *enc, "brown fox", 3);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].doc_id == after[i].doc_id);
    CHECK(before[i].score == after[i].score);  // float payload is bit-exact
  }
}

TEST_CASE("round-trip of a 1000-doc index preserves top-25 lists") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto corpus = random_corpus(1000, 123);
  auto index = vecindex::build_index(corpus, *enc);
  const auto path = temp_path("rr_large_roundtrip.bin");
  vecindex::save_index(index, path);
  auto loaded = vecindex::load_index(path);
  std::filesystem::remove(path);

  std::mt19937_64 g(17);
  static const char* kWords[] = {"alpha", "beta", "gamma", "delta", "omega",
                                 "sigma", "kappa", "theta", "mu",   "nu"};
  for (int t = 0; t < 20; ++t) {
    std::string q;
    const std::size_t len = 1 + g() % 4;
    for (std::size_t w = 0; w < len; ++w) {
      if (w > 0) q.push_back(' ');
      q += kWords[g() % 10];
    }
    auto before = vecindex::search(index, *enc, q, 25);
    auto after = vecindex::search(loaded, *enc, q, 25);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(before[i].doc_id == after[i].doc_id);
      CHECK(before[i].score == after[i].score);
    }
  }
}

TEST_CASE("truncated index file raises an integrity error") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  const auto path = temp_path("rr_truncated.bin");
  vecindex::save_index(index, path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 13);
  CHECK_THROWS_AS(vecindex::load_index(path), IntegrityError);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted payload raises an integrity error") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  const auto path = temp_path("rr_corrupt.bin");
  vecindex::save_index(index, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char byte = 0x5A;
    f.write(&byte, 1);
  }
  CHECK_THROWS_AS(vecindex::load_index(path), IntegrityError);
  std::filesystem::remove(path);
}

TEST_CASE("unsupported version is reported as such") {
  auto enc = embedding::make_encoder(hash_spec(8));
  auto index = vecindex::build_index(tiny_corpus(), *enc);
  const auto path = temp_path("rr_badversion.bin");
  vecindex::save_index(index, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);  // version field follows the magic
    char byte = 9;
    f.write(&byte, 1);
  }
  CHECK_THROWS_AS(vecindex::load_index(path), UnsupportedFormatError);
  std::filesystem::remove(path);
}

TEST_CASE("corpus JSONL ingestion validates lines") {
  const auto path = temp_path("rr_corpus.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id": "a", "title": null, "text": "first doc"})" << "\n";
    out << R"({"id": "b", "title": "t", "text": "second doc"})" << "\n";
    out << "not json at all\n";
  }
  CHECK_THROWS_WITH_AS(vecindex::load_corpus_jsonl(path),
                       doctest::Contains(":3:"), InvalidInputError);

  vecindex::IngestStats stats;
  auto corpus = vecindex::load_corpus_jsonl(path, /*skip_bad=*/true, &stats);
  CHECK(corpus.documents.size() == 2);
  CHECK(stats.skipped == 1);
  CHECK(stats.accepted == 2);
  std::filesystem::remove(path);
}

TEST_CASE("corpus save/load round-trip") {
  auto corpus = tiny_corpus();
  const auto path = temp_path("rr_corpus_rt.jsonl");
  vecindex::save_corpus_jsonl(corpus, path);
  auto loaded = vecindex::load_corpus_jsonl(path);
  std::filesystem::remove(path);
  REQUIRE(loaded.documents.size() == corpus.documents.size());
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    CHECK(loaded.documents[i].doc_id == corpus.documents[i].doc_id);
    CHECK(loaded.documents[i].title == corpus.documents[i].title);
    CHECK(loaded.documents[i].text == corpus.documents[i].text);
  }
  CHECK(loaded.content_hash() == corpus.content_hash());
}

TEST_CASE("duplicate doc ids are rejected") {
  Corpus c;
  c.documents = {{"a", std::nullopt, "x"}, {"a", std::nullopt, "y"}};
  CHECK_THROWS_AS(c.validate(), InvalidInputError);
}
