#include "rewardrag/reward.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "rewardrag/binio.hpp"
#include "rewardrag/errors.hpp"
#include "rewardrag/rng.hpp"

namespace rewardrag::reward {

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kKindRewardHead = 1;

// y = M x + b with M (rows x cols) row-major.
void affine(const std::vector<double>& m, const std::vector<double>& b,
            const std::vector<double>& x, std::size_t rows, std::size_t cols,
            std::vector<double>& y) {
  y.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* row = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += row[c] * x[c];
    }
    y[r] = acc;
  }
}

void softmax_inplace(std::vector<double>& z) {
  double max = z[0];
  for (double v : z) max = std::max(max, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - max);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

double xavier_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_xavier(std::vector<double>& m, std::size_t rows, std::size_t cols,
                 rng::Engine& g) {
  m.resize(rows * cols);
  const double limit = xavier_limit(cols, rows);
  for (auto& v : m) {
    v = (2.0 * rng::uniform_double(g) - 1.0) * limit;
  }
}

struct ForwardTrace {
  std::vector<double> v_reward;  // k
  std::vector<double> z1;        // h, pre-activation
  std::vector<double> a1;        // h, relu(z1)
  std::vector<double> coeff;     // k
  double r = 0.0;
};

ForwardTrace forward_trace(const PairEmbedding& pair,
                           const RewardHeadParams& p) {
  ForwardTrace t;
  affine(p.w_v, p.b_v, pair.emb_p, p.k, p.d_model, t.v_reward);
  affine(p.w1, p.b1, pair.emb_q, p.h, p.d_model, t.z1);
  t.a1 = t.z1;
  for (double& v : t.a1) v = std::max(0.0, v);
  affine(p.w2, p.b2, t.a1, p.k, p.h, t.coeff);
  softmax_inplace(t.coeff);
  t.r = 0.0;
  for (std::size_t i = 0; i < p.k; ++i) {
    t.r += t.coeff[i] * t.v_reward[i];
  }
  return t;
}

void check_pair_shape(const PairEmbedding& pair, const RewardHeadParams& p) {
  if (pair.emb_q.size() != p.d_model || pair.emb_p.size() != p.d_model) {
    throw InvalidInputError("reward head: pair embedding dims (" +
                            std::to_string(pair.emb_q.size()) + ", " +
                            std::to_string(pair.emb_p.size()) +
                            ") do not match d_model " + std::to_string(p.d_model));
  }
}

}  // namespace

PairEmbedding embed_pair(const embedding::TextEncoder& encoder,
                         const std::string& query, const std::string& document) {
  if (query.empty() || document.empty()) {
    throw InvalidInputError("embed_pair: query and document must be non-empty");
  }
  auto q = encoder.encode_raw(query);
  auto p = encoder.encode_raw(query + " [SEP] " + document);
  PairEmbedding pair;
  pair.emb_q.assign(q.vector.begin(), q.vector.end());
  pair.emb_p.assign(p.vector.begin(), p.vector.end());
  return pair;
}

void RewardHeadParams::validate() const {
  if (d_model == 0 || k == 0 || h == 0) {
    throw InvalidInputError("reward head: d_model, k, h must be positive");
  }
  auto check = [&](const std::vector<double>& m, std::size_t want, const char* name) {
    if (m.size() != want) {
      throw InvalidInputError(std::string("reward head: bad shape for ") + name);
    }
    for (double v : m) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("reward head: non-finite entry in ") + name);
      }
    }
  };
  check(w_v, k * d_model, "W_v");
  check(b_v, k, "b_v");
  check(w1, h * d_model, "W_1");
  check(b1, h, "b_1");
  check(w2, k * h, "W_2");
  check(b2, k, "b_2");
}

RewardHeadParams RewardHeadParams::init(std::size_t d_model, std::size_t k,
                                        std::size_t h, std::uint64_t seed) {
  if (d_model == 0 || k == 0 || h == 0) {
    throw InvalidInputError("reward head init: d_model, k, h must be positive");
  }
  RewardHeadParams p;
  p.d_model = d_model;
  p.k = k;
  p.h = h;
  rng::Engine g(seed);
  fill_xavier(p.w_v, k, d_model, g);
  p.b_v.assign(k, 0.0);
  fill_xavier(p.w1, h, d_model, g);
  p.b1.assign(h, 0.0);
  fill_xavier(p.w2, k, h, g);
  p.b2.assign(k, 0.0);
  return p;
}

void RewardHeadParams::axpy(double alpha, const RewardHeadParams& other) {
  auto apply = [alpha](std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] += alpha * src[i];
    }
  };
  apply(w_v, other.w_v);
  apply(b_v, other.b_v);
  apply(w1, other.w1);
  apply(b1, other.b1);
  apply(w2, other.w2);
  apply(b2, other.b2);
}

void RewardHeadParams::scale(double alpha) {
  for (auto* m : {&w_v, &b_v, &w1, &b1, &w2, &b2}) {
    for (double& v : *m) v *= alpha;
  }
}

double RewardHeadParams::sq_norm() const {
  double s = 0.0;
  for (const auto* m : {&w_v, &b_v, &w1, &b1, &w2, &b2}) {
    for (double v : *m) s += v * v;
  }
  return s;
}

ForwardResult reward_forward(const PairEmbedding& pair,
                             const RewardHeadParams& params) {
  params.validate();
  check_pair_shape(pair, params);
  ForwardTrace t = forward_trace(pair, params);
  if (!std::isfinite(t.r)) {
    throw NumericError("reward_forward: non-finite reward");
  }
  return ForwardResult{t.r, std::move(t.coeff), std::move(t.v_reward)};
}

double mse_loss(const std::vector<RewardExample>& batch,
                const RewardHeadParams& params) {
  if (batch.empty()) {
    throw InvalidInputError("mse_loss: empty batch");
  }
  params.validate();
  double sum = 0.0;
  for (const auto& ex : batch) {
    check_pair_shape(ex.pair, params);
    ForwardTrace t = forward_trace(ex.pair, params);
    const double resid = t.r - ex.target;
    sum += resid * resid;
  }
  return sum / static_cast<double>(batch.size());
}

RewardHeadParams reward_grad(const std::vector<RewardExample>& batch,
                             const RewardHeadParams& p) {
  if (batch.empty()) {
    throw InvalidInputError("reward_grad: empty batch");
  }
  p.validate();
  RewardHeadParams g;
  g.d_model = p.d_model;
  g.k = p.k;
  g.h = p.h;
  g.w_v.assign(p.w_v.size(), 0.0);
  g.b_v.assign(p.b_v.size(), 0.0);
  g.w1.assign(p.w1.size(), 0.0);
  g.b1.assign(p.b1.size(), 0.0);
  g.w2.assign(p.w2.size(), 0.0);
  g.b2.assign(p.b2.size(), 0.0);

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    check_pair_shape(ex.pair, p);
    ForwardTrace t = forward_trace(ex.pair, p);
    // d loss / d r for this example, with loss = mean of squared residuals.
    const double dr = 2.0 * (t.r - ex.target) * inv_n;

    // Reward layer: r depends on v_reward through the gate weights.
    for (std::size_t i = 0; i < p.k; ++i) {
      const double dv = dr * t.coeff[i];
      g.b_v[i] += dv;
      double* row = g.w_v.data() + i * p.d_model;
      for (std::size_t c = 0; c < p.d_model; ++c) {
        row[c] += dv * ex.pair.emb_p[c];
      }
    }

    // Gate: d r / d z2_j = coeff_j (v_j - r)  (softmax Jacobian folded in).
    std::vector<double> dz2(p.k);
    for (std::size_t j = 0; j < p.k; ++j) {
      dz2[j] = dr * t.coeff[j] * (t.v_reward[j] - t.r);
    }
    for (std::size_t j = 0; j < p.k; ++j) {
      g.b2[j] += dz2[j];
      double* row = g.w2.data() + j * p.h;
      for (std::size_t c = 0; c < p.h; ++c) {
        row[c] += dz2[j] * t.a1[c];
      }
    }

    // MLP hidden layer through the relu mask.
    std::vector<double> dz1(p.h, 0.0);
    for (std::size_t c = 0; c < p.h; ++c) {
      if (t.z1[c] <= 0.0) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < p.k; ++j) {
        acc += p.w2[j * p.h + c] * dz2[j];
      }
      dz1[c] = acc;
    }
    for (std::size_t rI = 0; rI < p.h; ++rI) {
      if (dz1[rI] == 0.0) continue;
      g.b1[rI] += dz1[rI];
      double* row = g.w1.data() + rI * p.d_model;
      for (std::size_t c = 0; c < p.d_model; ++c) {
        row[c] += dz1[rI] * ex.pair.emb_q[c];
      }
    }
  }
  return g;
}

double LabelMap::map(int finalscore) const {
  switch (finalscore) {
    case 0:
      return on0;
    case 1:
      return on1;
    case 2:
      return on2;
    default:
      throw InvalidInputError("label map: finalscore outside 0..2: " +
                              std::to_string(finalscore));
  }
}

TrainResult train_reward(const std::vector<RewardExample>& examples,
                         std::size_t k, std::size_t h, const TrainConfig& config) {
  if (examples.empty()) {
    throw InvalidInputError("train_reward: empty dataset");
  }
  if (config.batch_size < 1) {
    throw InvalidInputError("train_reward: batch_size must be >= 1");
  }
  const std::size_t d_model = examples[0].pair.emb_q.size();

  TrainResult result;
  result.params = RewardHeadParams::init(d_model, k, h, config.seed);
  rng::Engine g(config.seed);

  RewardHeadParams velocity;  // used only when momentum > 0
  if (config.momentum > 0.0) {
    velocity = result.params;
    velocity.scale(0.0);
  }

  result.epoch_loss.push_back(mse_loss(examples, result.params));

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RewardHeadParams last_good = result.params;
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng::shuffle(order, g);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::vector<RewardExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(examples[order[i]]);
      }
      RewardHeadParams grad = reward_grad(batch, result.params);
      if (config.momentum > 0.0) {
        velocity.scale(config.momentum);
        velocity.axpy(1.0, grad);
        result.params.axpy(-config.lr, velocity);
      } else {
        result.params.axpy(-config.lr, grad);
      }
    }
    const double loss = mse_loss(examples, result.params);
    if (!std::isfinite(loss)) {
      if (!config.abort_checkpoint_path.empty()) {
        save_checkpoint(last_good, config.abort_checkpoint_path);
      }
      throw NumericError("train_reward: non-finite loss at epoch " +
                         std::to_string(epoch + 1));
    }
    last_good = result.params;
    result.epoch_loss.push_back(loss);
  }
  return result;
}

std::vector<RewardExample> build_examples(
    const std::vector<critic::FeedbackRecord>& feedback,
    const std::vector<critic::QueryRecord>& queries,
    const vecindex::Corpus& corpus, const embedding::TextEncoder& encoder,
    const LabelMap& label_map) {
  if (feedback.empty()) {
    throw InvalidInputError("build_examples: no feedback records");
  }
  std::unordered_map<std::string, const critic::QueryRecord*> by_id;
  by_id.reserve(queries.size());
  for (const auto& q : queries) {
    by_id.emplace(q.query_id, &q);
  }
  std::vector<RewardExample> examples;
  examples.reserve(feedback.size());
  for (const auto& r : feedback) {
    auto qit = by_id.find(r.query_id);
    if (qit == by_id.end()) {
      throw InvalidInputError("build_examples: unknown query_id " + r.query_id);
    }
    const auto* doc = corpus.find(r.doc_id);
    if (!doc) {
      throw InvalidInputError("build_examples: unknown doc_id " + r.doc_id);
    }
    RewardExample ex;
    ex.pair = embed_pair(encoder, qit->second->text, doc->text);
    ex.target = label_map.map(r.finalscore);
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<ScoredPair> score_pairs(const std::vector<ResolvedPair>& pairs,
                                    const embedding::TextEncoder& encoder,
                                    const RewardHeadParams& params) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    PairEmbedding pair = embed_pair(encoder, p.query_text, p.doc_text);
    out.push_back({p.query_id, p.doc_id, reward_forward(pair, params).r});
  }
  return out;
}

void save_checkpoint(const RewardHeadParams& params, const std::string& path) {
  params.validate();
  binio::Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(kKindRewardHead);
  w.u32(static_cast<std::uint32_t>(params.d_model));
  w.u32(static_cast<std::uint32_t>(params.k));
  w.u32(static_cast<std::uint32_t>(params.h));
  for (const auto* m :
       {&params.w_v, &params.b_v, &params.w1, &params.b1, &params.w2, &params.b2}) {
    for (double v : *m) {
      w.f64(v);
    }
  }
  w.finish();
}

RewardHeadParams load_checkpoint(const std::string& path) {
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
  if (kind != kKindRewardHead) {
    throw UnsupportedFormatError("checkpoint is not a reward head: " + path);
  }
  RewardHeadParams p;
  p.d_model = r.u32();
  p.k = r.u32();
  p.h = r.u32();
  p.w_v.resize(p.k * p.d_model);
  p.b_v.resize(p.k);
  p.w1.resize(p.h * p.d_model);
  p.b1.resize(p.h);
  p.w2.resize(p.k * p.h);
  p.b2.resize(p.k);
  for (auto* m : {&p.w_v, &p.b_v, &p.w1, &p.b1, &p.w2, &p.b2}) {
    for (double& v : *m) {
      v = r.f64();
    }
  }
  r.verify_checksum();
  p.validate();
  return p;
}

void save_loss_history_csv(const std::vector<double>& epoch_loss,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open loss history file for writing: " + path);
  }
  out << "epoch,mean_loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) {
    out << i << ',' << epoch_loss[i] << '\n';
  }
}

}  // namespace rewardrag::reward
