#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cctype>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "rewardrag/embedding.hpp"
#include "rewardrag/errors.hpp"

using namespace rewardrag;
using embedding::EncodedText;
using embedding::EncoderSpec;
using embedding::Pooling;
using embedding::Role;

namespace {

EncodedText vec(std::vector<float> v) {
  EncodedText t;
  t.vector = std::move(v);
  return t;
}

EncoderSpec hash_spec(std::size_t dim, Pooling pooling = Pooling::kMean,
                      std::string iq = "", std::string id = "") {
  EncoderSpec spec;
  spec.name = "hash";
  spec.dim = dim;
  spec.pooling = pooling;
  spec.query_instruction = std::move(iq);
  spec.document_instruction = std::move(id);
  return spec;
}

// ---------------------------------------------------------------------------
// Independent reimplementation of the hash featurizer, kept deliberately
// separate from the production code path. Mirrors the documented scheme:
// bag bucket fnv1a64(w) % dim += 1; positional bucket
// fnv1a64(w + "@" + itoa(i)) % dim += 0.5 * pw(i).
// ---------------------------------------------------------------------------
std::uint64_t oracle_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<float> oracle_featurize(const std::string& text, std::size_t dim,
                                    Pooling pooling) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);

  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    acc[oracle_fnv(words[i]) % dim] += 1.0;
    double pw = 1.0;
    if (pooling == Pooling::kFirstPosition) {
      pw = 1.0 / (1.0 + static_cast<double>(i));
    } else if (pooling == Pooling::kLastPosition) {
      pw = 1.0 / (1.0 + static_cast<double>(words.size() - 1 - i));
    }
    acc[oracle_fnv(words[i] + "@" + std::to_string(i)) % dim] += 0.5 * pw;
  }
  std::vector<float> out(dim);
  for (std::size_t d = 0; d < dim; ++d) out[d] = static_cast<float>(acc[d]);
  return out;
}

}  // namespace

TEST_CASE("cosine of identical unit vectors is 1") {
  CHECK(embedding::cosine_sim(vec({1, 0}), vec({1, 0})) == doctest::Approx(1.0));
}

TEST_CASE("cosine of orthogonal vectors is 0") {
  CHECK(embedding::cosine_sim(vec({1, 0}), vec({0, 1})) == doctest::Approx(0.0));
}

TEST_CASE("cosine matches the hand-computed [1,2,3].[4,5,6] value") {
  // 32 / (sqrt(14) * sqrt(77)) evaluated by hand.
  const double expected = 32.0 / (std::sqrt(14.0) * std::sqrt(77.0));
  CHECK(expected == doctest::Approx(0.974631846).epsilon(1e-8));
  CHECK(embedding::cosine_sim(vec({1, 2, 3}), vec({4, 5, 6})) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cosine rejects dimension mismatch and zero vectors") {
  CHECK_THROWS_AS(embedding::cosine_sim(vec({1, 0}), vec({1, 0, 0})),
                  InvalidInputError);
  CHECK_THROWS_AS(embedding::cosine_sim(vec({0, 0}), vec({1, 0})),
                  DegenerateInputError);
}

TEST_CASE("cosine properties on random vectors") {
  std::mt19937_64 g(42);
  auto random_vec = [&](std::size_t dim) {
    std::vector<float> v(dim);
    for (auto& x : v) {
      x = static_cast<float>((g() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    }
    return v;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 2 + g() % 16;
    auto a = random_vec(dim);
    auto b = random_vec(dim);
    double na = 0.0;
    for (float x : a) na += x * x;
    if (na == 0.0) continue;

    const double self = embedding::cosine_sim(vec(a), vec(a));
    CHECK(self == doctest::Approx(1.0).epsilon(1e-9));

    double nb = 0.0;
    for (float x : b) nb += x * x;
    if (nb == 0.0) continue;
    const double ab = embedding::cosine_sim(vec(a), vec(b));
    const double ba = embedding::cosine_sim(vec(b), vec(a));
    CHECK(ab == ba);  // exact symmetry
    CHECK(std::abs(ab) <= 1.0 + 1e-12);

    const float c = static_cast<float>(0.25 + (g() >> 11) * 0x1.0p-53 * 7.0);
    auto scaled = a;
    for (auto& x : scaled) x *= c;
    CHECK(embedding::cosine_sim(vec(scaled), vec(b)) ==
          doctest::Approx(ab).epsilon(1e-9));
  }
}

TEST_CASE("encode is deterministic") {
  auto enc = embedding::make_encoder(hash_spec(4));
  auto a = enc->encode(Role::kQuery, "abc");
  auto b = enc->encode(Role::kQuery, "abc");
  CHECK(a.vector == b.vector);
  CHECK(a.vector.size() == 4);
  CHECK(a.source_role == Role::kQuery);
  CHECK_FALSE(a.normalized);
}

TEST_CASE("empty instructions make roles agree") {
  auto enc = embedding::make_encoder(hash_spec(16));
  auto q = enc->encode(Role::kQuery, "shared text here");
  auto d = enc->encode(Role::kDocument, "shared text here");
  CHECK(q.vector == d.vector);
}

TEST_CASE("instructions are prepended with a single space") {
  auto plain = embedding::make_encoder(hash_spec(32));
  auto instructed =
      embedding::make_encoder(hash_spec(32, Pooling::kMean, "find passages for:"));
  auto got = instructed->encode(Role::kQuery, "world cup");
  auto expected = plain->encode(Role::kQuery, "find passages for: world cup");
  CHECK(got.vector == expected.vector);
  // Document role has no instruction in this spec, so it matches plain text.
  CHECK(instructed->encode(Role::kDocument, "world cup").vector ==
        plain->encode(Role::kDocument, "world cup").vector);
}

TEST_CASE("featurizer matches an independent reimplementation byte-for-byte") {
  for (auto pooling :
       {Pooling::kMean, Pooling::kFirstPosition, Pooling::kLastPosition}) {
    auto enc = embedding::make_encoder(hash_spec(64, pooling));
    auto got = enc->encode(Role::kDocument, "world cup uruguay");
    auto expected = oracle_featurize("world cup uruguay", 64, pooling);
    REQUIRE(got.vector.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(got.vector[i] == expected[i]);
    }
  }
}

TEST_CASE("featurizer is order-sensitive through the positional salt") {
  auto enc = embedding::make_encoder(hash_spec(128));
  auto ab = enc->encode_raw("alpha [SEP] beta");
  auto ba = enc->encode_raw("beta [SEP] alpha");
  CHECK(ab.vector != ba.vector);
}

TEST_CASE("pooling mode changes the featurizer output") {
  auto mean = embedding::make_encoder(hash_spec(64, Pooling::kMean));
  auto first = embedding::make_encoder(hash_spec(64, Pooling::kFirstPosition));
  auto last = embedding::make_encoder(hash_spec(64, Pooling::kLastPosition));
  const std::string text = "one two three four";
  CHECK(mean->encode_raw(text).vector != first->encode_raw(text).vector);
  CHECK(first->encode_raw(text).vector != last->encode_raw(text).vector);
}

TEST_CASE("empty text is rejected") {
  auto enc = embedding::make_encoder(hash_spec(8));
  CHECK_THROWS_AS(enc->encode(Role::kQuery, ""), InvalidInputError);
  CHECK_THROWS_AS(enc->encode(Role::kQuery, "   \t\n"), InvalidInputError);
}

TEST_CASE("tokenized input contract") {
  auto t = embedding::featurizer_tokenize("a b [SEP] c");
  REQUIRE(t.tokens.size() == 6);
  CHECK(t.tokens.front() == "<s>");
  CHECK(t.tokens.back() == "</s>");
  REQUIRE(t.separator_pos.has_value());
  CHECK(*t.separator_pos == 3);
  CHECK_NOTHROW(t.validate());

  embedding::TokenizedInput bad;
  bad.tokens = {"<s>", "x", "</s>"};
  bad.separator_pos = 0;  // on the begin marker
  CHECK_THROWS_AS(bad.validate(), InvalidInputError);
  bad.separator_pos = 2;  // on the end marker
  CHECK_THROWS_AS(bad.validate(), InvalidInputError);
}

TEST_CASE("spec validation and unknown plugins") {
  EncoderSpec spec = hash_spec(0);
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  EncoderSpec unknown = hash_spec(8);
  unknown.name = "nonexistent";
  CHECK_THROWS_AS(embedding::make_encoder(unknown), ConfigError);
}

TEST_CASE("pooling names round-trip") {
  for (auto pooling :
       {Pooling::kMean, Pooling::kFirstPosition, Pooling::kLastPosition}) {
    CHECK(embedding::pooling_from_string(embedding::to_string(pooling)) == pooling);
  }
  CHECK_THROWS_AS(embedding::pooling_from_string("cls"), ConfigError);
}
