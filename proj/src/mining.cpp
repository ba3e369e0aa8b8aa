#include "rewardrag/mining.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "rewardrag/errors.hpp"

using nlohmann::json;

namespace rewardrag::mining {

void MinedTriple::validate(double pos_threshold) const {
  if (positive_reward < pos_threshold) {
    throw InvalidInputError("mined triple " + query_id +
                            ": positive reward below threshold");
  }
  if (negative_doc_ids.size() != negative_rewards.size()) {
    throw InvalidInputError("mined triple " + query_id +
                            ": negative id/reward length mismatch");
  }
  if (negative_doc_ids.empty()) {
    throw InvalidInputError("mined triple " + query_id + ": no negatives");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < negative_doc_ids.size(); ++i) {
    if (negative_doc_ids[i] == positive_doc_id) {
      throw InvalidInputError("mined triple " + query_id +
                              ": positive appears among negatives");
    }
    if (!seen.insert(negative_doc_ids[i]).second) {
      throw InvalidInputError("mined triple " + query_id + ": duplicate negative " +
                              negative_doc_ids[i]);
    }
    if (negative_rewards[i] >= pos_threshold) {
      throw InvalidInputError("mined triple " + query_id +
                              ": negative reward at/above threshold");
    }
  }
}

MiningResult mine_triples(const std::vector<critic::QueryRecord>& queries,
                          const vecindex::RetrievalIndex& index,
                          const embedding::TextEncoder& encoder,
                          const reward::RewardHeadParams& reward_params,
                          const vecindex::Corpus& corpus,
                          const MiningConfig& config) {
  if (config.top_n < 1 + config.n_hard_neg) {
    throw InvalidInputError("mine_triples: top_n must be >= 1 + n_hard_neg");
  }
  if (config.n_hard_neg < 1) {
    throw InvalidInputError("mine_triples: n_hard_neg must be >= 1");
  }
  try {
    reward_params.validate();
  } catch (const Error& e) {
    throw InvalidStateError(std::string("mine_triples: reward head unusable: ") +
                            e.what());
  }

  MiningResult result;
  for (const auto& query : queries) {
    auto hits = vecindex::search(index, encoder, query.text, config.top_n);

    struct Scored {
      const vecindex::RankedHit* hit;
      double reward;
    };
    std::vector<Scored> scored;
    scored.reserve(hits.size());
    for (const auto& hit : hits) {
      const auto* doc = corpus.find(hit.doc_id);
      if (!doc) {
        throw InvalidStateError("mine_triples: index doc_id " + hit.doc_id +
                                " missing from corpus");
      }
      auto pair = reward::embed_pair(encoder, query.text, doc->text);
      scored.push_back({&hit, reward::reward_forward(pair, reward_params).r});
    }

    // Positive: highest reward at/above threshold, ties by doc_id ascending.
    const Scored* positive = nullptr;
    for (const auto& s : scored) {
      if (s.reward < config.pos_threshold) continue;
      if (!positive || s.reward > positive->reward ||
          (s.reward == positive->reward && s.hit->doc_id < positive->hit->doc_id)) {
        positive = &s;
      }
    }
    if (!positive) {
      result.skipped.push_back({query.query_id, "no-positive"});
      continue;
    }

    // Hard negatives: below threshold, ordered by retrieval similarity
    // (the hits are already (score desc, doc_id asc)).
    MinedTriple triple;
    triple.query_id = query.query_id;
    triple.positive_doc_id = positive->hit->doc_id;
    triple.positive_reward = positive->reward;
    for (const auto& s : scored) {
      if (static_cast<int>(triple.negative_doc_ids.size()) >= config.n_hard_neg) {
        break;
      }
      if (s.reward >= config.pos_threshold) continue;
      triple.negative_doc_ids.push_back(s.hit->doc_id);
      triple.negative_rewards.push_back(s.reward);
    }
    if (triple.negative_doc_ids.empty()) {
      result.skipped.push_back({query.query_id, "no-negatives"});
      continue;
    }
    triple.validate(config.pos_threshold);
    result.triples.push_back(std::move(triple));
  }

  auto by_query = [](const auto& a, const auto& b) { return a.query_id < b.query_id; };
  std::sort(result.triples.begin(), result.triples.end(), by_query);
  std::sort(result.skipped.begin(), result.skipped.end(), by_query);
  return result;
}

std::vector<MinedTriple> load_triples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open triples file: " + path);
  }
  std::vector<MinedTriple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      MinedTriple t;
      t.query_id = j.at("query_id").get<std::string>();
      t.positive_doc_id = j.at("positive_doc_id").get<std::string>();
      t.positive_reward = j.at("positive_reward").get<double>();
      for (const auto& id : j.at("negative_doc_ids")) {
        t.negative_doc_ids.push_back(id.get<std::string>());
      }
      for (const auto& r : j.at("negative_rewards")) {
        t.negative_rewards.push_back(r.get<double>());
      }
      triples.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw InvalidInputError(path + ":" + std::to_string(line_no) +
                              ": bad triple line: " + e.what());
    }
  }
  return triples;
}

void save_triples_jsonl(const std::vector<MinedTriple>& triples,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open triples file for writing: " + path);
  }
  for (const auto& t : triples) {
    json j;
    j["query_id"] = t.query_id;
    j["positive_doc_id"] = t.positive_doc_id;
    j["negative_doc_ids"] = t.negative_doc_ids;
    j["positive_reward"] = t.positive_reward;
    j["negative_rewards"] = t.negative_rewards;
    out << j.dump() << '\n';
  }
}

void save_skipped_jsonl(const std::vector<SkippedQuery>& skipped,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open skipped report for writing: " + path);
  }
  for (const auto& s : skipped) {
    json j;
    j["query_id"] = s.query_id;
    j["reason"] = s.reason;
    out << j.dump() << '\n';
  }
}

}  // namespace rewardrag::mining
