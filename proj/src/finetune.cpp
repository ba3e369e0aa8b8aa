#include "rewardrag/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "rewardrag/binio.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/rng.hpp"

using nlohmann::json;

namespace rewardrag::finetune {

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kKindAdapter = 2;

struct Projected {
  std::vector<double> v;
  double norm = 0.0;
};

Projected project(const AdapterParams& p, std::span<const float> x) {
  Projected out;
  out.v.resize(p.dim_out);
  for (std::size_t r = 0; r < p.dim_out; ++r) {
    double acc = p.b[r];
    const double* row = p.a.data() + r * p.dim_in;
    for (std::size_t c = 0; c < p.dim_in; ++c) {
      acc += row[c] * static_cast<double>(x[c]);
    }
    out.v[r] = acc;
  }
  double sq = 0.0;
  for (double v : out.v) sq += v * v;
  out.norm = std::sqrt(sq);
  return out;
}

double cos_projected(const Projected& u, const Projected& v) {
  if (u.norm == 0.0 || v.norm == 0.0) {
    throw DegenerateInputError("info_nce: adapter projected a vector to zero");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < u.v.size(); ++i) {
    dot += u.v[i] * v.v[i];
  }
  return dot / (u.norm * v.norm);
}

void check_batch(const ContrastiveBatch& batch, const AdapterParams& params,
                 double tau) {
  if (tau <= 0.0) {
    throw InvalidInputError("info_nce: tau must be positive");
  }
  if (batch.empty()) {
    throw InvalidInputError("info_nce: empty batch");
  }
  params.validate();
  for (const auto& t : batch) {
    if (t.query_vec.size() != params.dim_in ||
        t.positive_vec.size() != params.dim_in) {
      throw InvalidInputError("info_nce: triple " + t.query_id +
                              " has wrong embedding dimension");
    }
    if (t.negative_vecs.size() != t.negative_ids.size()) {
      throw InvalidInputError("info_nce: triple " + t.query_id +
                              " id/vector length mismatch");
    }
    for (const auto& v : t.negative_vecs) {
      if (v.size() != params.dim_in) {
        throw InvalidInputError("info_nce: triple " + t.query_id +
                                " has wrong negative dimension");
      }
    }
  }
}

// The negative set for query i, as (triple index, slot) pairs where slot -1
// means that triple's positive. Fixed enumeration order.
std::vector<std::pair<std::size_t, int>> negative_set(const ContrastiveBatch& batch,
                                                      std::size_t i) {
  std::vector<std::pair<std::size_t, int>> negs;
  const std::string& own_positive = batch[i].positive_id;
  for (std::size_t s = 0; s < batch[i].negative_ids.size(); ++s) {
    if (batch[i].negative_ids[s] == own_positive) continue;  // contract exclusion
    negs.emplace_back(i, static_cast<int>(s));
  }
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (j == i) continue;
    if (batch[j].positive_id != own_positive) {
      negs.emplace_back(j, -1);
    }
    for (std::size_t s = 0; s < batch[j].negative_ids.size(); ++s) {
      if (batch[j].negative_ids[s] == own_positive) continue;
      negs.emplace_back(j, static_cast<int>(s));
    }
  }
  return negs;
}

}  // namespace

void AdapterParams::validate() const {
  if (dim_in == 0 || dim_out == 0) {
    throw InvalidInputError("adapter: dims must be positive");
  }
  if (a.size() != dim_in * dim_out || b.size() != dim_out) {
    throw InvalidInputError("adapter: shape mismatch");
  }
  for (double v : a) {
    if (!std::isfinite(v)) throw NumericError("adapter: non-finite entry in A");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw NumericError("adapter: non-finite entry in b");
  }
}

AdapterParams AdapterParams::identity(std::size_t dim) {
  AdapterParams p;
  p.dim_in = dim;
  p.dim_out = dim;
  p.a.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    p.a[i * dim + i] = 1.0;
  }
  p.b.assign(dim, 0.0);
  return p;
}

void AdapterParams::axpy(double alpha, const AdapterParams& other) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += alpha * other.a[i];
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += alpha * other.b[i];
}

void AdapterParams::scale(double alpha) {
  for (double& v : a) v *= alpha;
  for (double& v : b) v *= alpha;
}

double AdapterParams::sq_norm() const {
  double s = 0.0;
  for (double v : a) s += v * v;
  for (double v : b) s += v * v;
  return s;
}

std::vector<float> AdapterParams::apply(std::span<const float> x) const {
  if (x.size() != dim_in) {
    throw InvalidInputError("adapter: input dimension mismatch");
  }
  std::vector<float> out(dim_out);
  for (std::size_t r = 0; r < dim_out; ++r) {
    double acc = b[r];
    const double* row = a.data() + r * dim_in;
    for (std::size_t c = 0; c < dim_in; ++c) {
      acc += row[c] * static_cast<double>(x[c]);
    }
    out[r] = static_cast<float>(acc);
  }
  return out;
}

void save_adapter(const AdapterParams& params, const std::string& path) {
  params.validate();
  binio::Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(kKindAdapter);
  w.u32(static_cast<std::uint32_t>(params.dim_in));
  w.u32(static_cast<std::uint32_t>(params.dim_out));
  w.u32(0);
  for (double v : params.a) w.f64(v);
  for (double v : params.b) w.f64(v);
  w.finish();
}

AdapterParams load_adapter(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw UnsupportedFormatError("not a checkpoint file: " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedFormatError("unsupported checkpoint version " +
                                 std::to_string(version) + " in " + path);
  }
  const std::uint32_t kind = r.u32();
  if (kind != kKindAdapter) {
    throw UnsupportedFormatError("checkpoint is not an adapter: " + path);
  }
  AdapterParams p;
  p.dim_in = r.u32();
  p.dim_out = r.u32();
  r.u32();  // reserved
  p.a.resize(p.dim_in * p.dim_out);
  p.b.resize(p.dim_out);
  for (double& v : p.a) v = r.f64();
  for (double& v : p.b) v = r.f64();
  r.verify_checksum();
  p.validate();
  return p;
}

double info_nce_from_sims(double sim_pos, std::span<const double> sim_negs,
                          double tau) {
  if (tau <= 0.0) {
    throw InvalidInputError("info_nce: tau must be positive");
  }
  const double lp = sim_pos / tau;
  double max_logit = lp;
  for (double s : sim_negs) {
    max_logit = std::max(max_logit, s / tau);
  }
  double z = std::exp(lp - max_logit);
  for (double s : sim_negs) {
    z += std::exp(s / tau - max_logit);
  }
  return -(lp - max_logit) + std::log(z);
}

double info_nce_loss(const ContrastiveBatch& batch, const AdapterParams& params,
                     double tau) {
  check_batch(batch, params, tau);

  // Project each distinct vector once.
  std::vector<Projected> queries(batch.size());
  std::vector<Projected> positives(batch.size());
  std::vector<std::vector<Projected>> negatives(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    queries[i] = project(params, batch[i].query_vec);
    positives[i] = project(params, batch[i].positive_vec);
    negatives[i].reserve(batch[i].negative_vecs.size());
    for (const auto& v : batch[i].negative_vecs) {
      negatives[i].push_back(project(params, v));
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double sim_pos = cos_projected(queries[i], positives[i]);
    std::vector<double> sim_negs;
    for (const auto& [j, slot] : negative_set(batch, i)) {
      const Projected& doc =
          slot < 0 ? positives[j] : negatives[j][static_cast<std::size_t>(slot)];
      sim_negs.push_back(cos_projected(queries[i], doc));
    }
    total += info_nce_from_sims(sim_pos, sim_negs, tau);
  }
  return total / static_cast<double>(batch.size());
}

AdapterParams info_nce_grad(const ContrastiveBatch& batch,
                            const AdapterParams& params, double tau) {
  check_batch(batch, params, tau);

  std::vector<Projected> queries(batch.size());
  std::vector<Projected> positives(batch.size());
  std::vector<std::vector<Projected>> negatives(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    queries[i] = project(params, batch[i].query_vec);
    positives[i] = project(params, batch[i].positive_vec);
    negatives[i].reserve(batch[i].negative_vecs.size());
    for (const auto& v : batch[i].negative_vecs) {
      negatives[i].push_back(project(params, v));
    }
  }

  AdapterParams grad;
  grad.dim_in = params.dim_in;
  grad.dim_out = params.dim_out;
  grad.a.assign(params.a.size(), 0.0);
  grad.b.assign(params.b.size(), 0.0);

  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  // Accumulates d loss / d projected(u) and d loss / d projected(v) for one
  // similarity term with upstream weight g, then folds both into dA, db.
  auto add_pair_grad = [&](const Projected& u, std::span<const float> xu,
                           const Projected& v, std::span<const float> xv,
                           double cos_uv, double g) {
    for (std::size_t a = 0; a < params.dim_out; ++a) {
      const double du =
          g * (v.v[a] / (u.norm * v.norm) - cos_uv * u.v[a] / (u.norm * u.norm));
      const double dv =
          g * (u.v[a] / (u.norm * v.norm) - cos_uv * v.v[a] / (v.norm * v.norm));
      grad.b[a] += du + dv;
      double* row = grad.a.data() + a * params.dim_in;
      for (std::size_t c = 0; c < params.dim_in; ++c) {
        row[c] += du * static_cast<double>(xu[c]) + dv * static_cast<double>(xv[c]);
      }
    }
  };

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto negs = negative_set(batch, i);
    const double sim_pos = cos_projected(queries[i], positives[i]);
    std::vector<double> sims(negs.size());
    std::vector<const Projected*> docs(negs.size());
    std::vector<std::span<const float>> raw(negs.size());
    for (std::size_t nIdx = 0; nIdx < negs.size(); ++nIdx) {
      const auto& [j, slot] = negs[nIdx];
      docs[nIdx] =
          slot < 0 ? &positives[j] : &negatives[j][static_cast<std::size_t>(slot)];
      raw[nIdx] = slot < 0 ? std::span<const float>(batch[j].positive_vec)
                           : std::span<const float>(
                                 batch[j].negative_vecs[static_cast<std::size_t>(slot)]);
      sims[nIdx] = cos_projected(queries[i], *docs[nIdx]);
    }

    // Softmax responsibilities over (positive, negatives) logits.
    double max_logit = sim_pos / tau;
    for (double s : sims) max_logit = std::max(max_logit, s / tau);
    double z = std::exp(sim_pos / tau - max_logit);
    for (double s : sims) z += std::exp(s / tau - max_logit);
    const double p_pos = std::exp(sim_pos / tau - max_logit) / z;

    // d loss_i / d sim_pos = -(1 - p_pos) / tau; d loss_i / d sim_neg = p_neg / tau.
    add_pair_grad(queries[i], batch[i].query_vec, positives[i],
                  batch[i].positive_vec, sim_pos,
                  -(1.0 - p_pos) / tau * inv_batch);
    for (std::size_t nIdx = 0; nIdx < negs.size(); ++nIdx) {
      const double p_neg = std::exp(sims[nIdx] / tau - max_logit) / z;
      const auto& [j, slot] = negs[nIdx];
      (void)j;
      (void)slot;
      add_pair_grad(queries[i], batch[i].query_vec, *docs[nIdx], raw[nIdx],
                    sims[nIdx], p_neg / tau * inv_batch);
    }
  }
  return grad;
}

AdapterTrainResult train_adapter(const std::vector<mining::MinedTriple>& triples,
                                 const std::vector<critic::QueryRecord>& queries,
                                 const vecindex::Corpus& corpus,
                                 const embedding::TextEncoder& base,
                                 const AdapterTrainConfig& config) {
  if (triples.empty()) {
    throw InvalidInputError("train_adapter: no triples");
  }
  if (config.batch_size < 1) {
    throw InvalidInputError("train_adapter: batch_size must be >= 1");
  }

  std::unordered_map<std::string, const critic::QueryRecord*> by_id;
  for (const auto& q : queries) {
    by_id.emplace(q.query_id, &q);
  }
  auto doc_text = [&](const std::string& id) -> const std::string& {
    const auto* doc = corpus.find(id);
    if (!doc) {
      throw InvalidInputError("train_adapter: unknown doc_id " + id);
    }
    return doc->text;
  };

  // Resolve every triple to frozen base embeddings once.
  ContrastiveBatch resolved;
  resolved.reserve(triples.size());
  for (const auto& t : triples) {
    auto qit = by_id.find(t.query_id);
    if (qit == by_id.end()) {
      throw InvalidInputError("train_adapter: unknown query_id " + t.query_id);
    }
    ResolvedTriple rt;
    rt.query_id = t.query_id;
    rt.query_vec =
        base.encode(embedding::Role::kQuery, qit->second->text).vector;
    rt.positive_id = t.positive_doc_id;
    rt.positive_vec =
        base.encode(embedding::Role::kDocument, doc_text(t.positive_doc_id)).vector;
    for (const auto& nid : t.negative_doc_ids) {
      rt.negative_ids.push_back(nid);
      rt.negative_vecs.push_back(
          base.encode(embedding::Role::kDocument, doc_text(nid)).vector);
    }
    resolved.push_back(std::move(rt));
  }

  AdapterTrainResult result;
  result.params = AdapterParams::identity(base.dim());
  AdapterParams last_good = result.params;
  rng::Engine g(config.seed);

  std::vector<std::size_t> order(resolved.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng::shuffle(order, g);
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      ContrastiveBatch batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(resolved[order[i]]);
      }
      epoch_sum += info_nce_loss(batch, result.params, config.tau);
      ++batches;
      AdapterParams grad = info_nce_grad(batch, result.params, config.tau);
      result.params.axpy(-config.lr, grad);
    }
    const double mean_loss = epoch_sum / static_cast<double>(batches);
    if (!std::isfinite(mean_loss) || !std::isfinite(result.params.sq_norm())) {
      if (!config.abort_checkpoint_path.empty()) {
        save_adapter(last_good, config.abort_checkpoint_path);
      }
      throw NumericError("train_adapter: non-finite loss at epoch " +
                         std::to_string(epoch + 1));
    }
    last_good = result.params;
    result.epoch_loss.push_back(mean_loss);
  }
  return result;
}

AdaptedEncoder::AdaptedEncoder(std::shared_ptr<const embedding::TextEncoder> base,
                               AdapterParams adapter)
    : base_(std::move(base)), adapter_(std::move(adapter)) {
  adapter_.validate();
  if (adapter_.dim_in != base_->dim()) {
    throw InvalidInputError("adapted encoder: adapter dim_in " +
                            std::to_string(adapter_.dim_in) +
                            " does not match base dim " +
                            std::to_string(base_->dim()));
  }
  spec_ = base_->spec();
  spec_.name = base_->spec().name + "+adapter";
  spec_.dim = adapter_.dim_out;
}

embedding::EncodedText AdaptedEncoder::encode(embedding::Role role,
                                              const std::string& text) const {
  auto base = base_->encode(role, text);
  base.vector = adapter_.apply(base.vector);
  return base;
}

embedding::EncodedText AdaptedEncoder::encode_raw(const std::string& text) const {
  auto base = base_->encode_raw(text);
  base.vector = adapter_.apply(base.vector);
  return base;
}

void save_composed_spec(const ComposedSpec& spec, const std::string& path) {
  json j;
  j["base_spec"] = {{"name", spec.base_spec.name},
                    {"dim", spec.base_spec.dim},
                    {"pooling", embedding::to_string(spec.base_spec.pooling)},
                    {"query_instruction", spec.base_spec.query_instruction},
                    {"document_instruction", spec.base_spec.document_instruction}};
  j["adapter_path"] = spec.adapter_path;
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open composed spec for writing: " + path);
  }
  out << j.dump(2) << '\n';
}

ComposedSpec load_composed_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open composed spec: " + path);
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInputError("bad composed spec " + path + ": " + e.what());
  }
  ComposedSpec spec;
  const json& base = j.at("base_spec");
  spec.base_spec.name = base.at("name").get<std::string>();
  spec.base_spec.dim = base.at("dim").get<std::size_t>();
  spec.base_spec.pooling =
      embedding::pooling_from_string(base.at("pooling").get<std::string>());
  spec.base_spec.query_instruction = base.at("query_instruction").get<std::string>();
  spec.base_spec.document_instruction =
      base.at("document_instruction").get<std::string>();
  spec.adapter_path = j.at("adapter_path").get<std::string>();
  if (!spec.adapter_path.empty() && spec.adapter_path[0] != '/') {
    spec.adapter_path =
        (std::filesystem::path(path).parent_path() / spec.adapter_path).string();
  }
  return spec;
}

std::shared_ptr<embedding::TextEncoder> make_composed_encoder(
    const ComposedSpec& spec, const embedding::EncoderOptions& options) {
  auto base = embedding::make_encoder(spec.base_spec, options);
  return std::make_shared<AdaptedEncoder>(base, load_adapter(spec.adapter_path));
}

namespace {

std::string zero_pad(int value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) {
    s.insert(s.begin(), '0');
  }
  return s;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config) {
  if (config.n_topics < 1 || config.docs_per_topic < 2 ||
      config.queries_per_topic < 1 || config.vocab < 1) {
    throw InvalidInputError("synthetic dataset: bad config");
  }
  if (config.noise < 0.0 || config.noise > 1.0) {
    throw InvalidInputError("synthetic dataset: noise must be in [0, 1]");
  }

  constexpr int kTopicVocab = 24;
  constexpr int kDocLen = 24;
  constexpr int kQueryTopicTerms = 3;
  constexpr double kDistractorTopicalProb = 0.5;
  constexpr double kAnswerShare = 0.3;
  static const char* kQuestionWords[] = {"what", "which", "who",
                                         "where", "when", "how"};

  rng::Engine g(config.seed);
  SyntheticDataset data;

  for (int t = 0; t < config.n_topics; ++t) {
    const std::string tid = zero_pad(t, 3);
    const std::string answer_token = "ans" + tid + "x";
    auto topic_word = [&](std::uint64_t j) {
      return "t" + tid + "w" + std::to_string(j);
    };
    auto filler_word = [&](std::uint64_t v) { return "f" + std::to_string(v); };

    const int n_answer = std::max(
        1, static_cast<int>(kAnswerShare * config.docs_per_topic + 0.5));

    for (int d = 0; d < config.docs_per_topic; ++d) {
      const bool answer_doc = d < n_answer;
      std::vector<std::string> words;
      words.reserve(kDocLen + 1);
      for (int wi = 0; wi < kDocLen; ++wi) {
        const bool topical =
            answer_doc ||
            rng::uniform_double(g) < kDistractorTopicalProb;
        std::string word =
            topical ? topic_word(rng::uniform_below(g, kTopicVocab))
                    : filler_word(rng::uniform_below(
                          g, static_cast<std::uint64_t>(config.vocab)));
        if (rng::uniform_double(g) < config.noise) {
          word = filler_word(
              rng::uniform_below(g, static_cast<std::uint64_t>(config.vocab)));
        }
        words.push_back(std::move(word));
      }
      if (answer_doc) {
        const std::size_t pos =
            static_cast<std::size_t>(rng::uniform_below(g, words.size() + 1));
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), answer_token);
      }
      vecindex::Document doc;
      doc.doc_id = "t" + tid + "d" + zero_pad(d, 2);
      std::string text;
      for (std::size_t wi = 0; wi < words.size(); ++wi) {
        if (wi > 0) text.push_back(' ');
        text += words[wi];
      }
      doc.text = std::move(text);
      data.corpus.documents.push_back(std::move(doc));
    }

    for (int qn = 0; qn < config.queries_per_topic; ++qn) {
      critic::QueryRecord q;
      q.query_id = "t" + tid + "q" + zero_pad(qn, 2);
      std::string text(kQuestionWords[rng::uniform_below(g, 6)]);
      for (std::size_t j :
           rng::sample_without_replacement(kTopicVocab, kQueryTopicTerms, g)) {
        text.push_back(' ');
        text += topic_word(j);
      }
      q.text = std::move(text);
      q.expert_answers.push_back(answer_token);
      for (int d = 0; d < n_answer; ++d) {
        data.qrels.grades[q.query_id]["t" + tid + "d" + zero_pad(d, 2)] = 2;
      }
      data.queries.push_back(std::move(q));
    }
  }

  data.corpus.validate();
  return data;
}

}  // namespace rewardrag::finetune
