#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rewardrag/critic.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/vecindex.hpp"

namespace rewardrag::reward {

/// Query-position and full-prompt embeddings for one (query, document) pair.
struct PairEmbedding {
  std::vector<double> emb_q;
  std::vector<double> emb_p;
};

/// emb_q is the encoding of the query alone, emb_p the encoding of
/// "query [SEP] document"; neither applies instruction prefixes. Plugins
/// without token-position access (both built-ins) declare exactly this
/// convention for the query-side vector.
PairEmbedding embed_pair(const embedding::TextEncoder& encoder,
                         const std::string& query, const std::string& document);

/// Trainable head: a linear reward layer over emb_p producing a k-vector,
/// gated by softmax(MLP(emb_q)). All matrices row-major.
struct RewardHeadParams {
  std::size_t d_model = 0;
  std::size_t k = 0;
  std::size_t h = 0;
  std::vector<double> w_v;  // k x d_model
  std::vector<double> b_v;  // k
  std::vector<double> w1;   // h x d_model
  std::vector<double> b1;   // h
  std::vector<double> w2;   // k x h
  std::vector<double> b2;   // k

  void validate() const;
  /// Xavier-uniform matrices, zero biases; fill order w_v, w1, w2.
  static RewardHeadParams init(std::size_t d_model, std::size_t k, std::size_t h,
                               std::uint64_t seed);

  // Elementwise arithmetic used by the optimizer and by gradient tests.
  void axpy(double alpha, const RewardHeadParams& other);  // this += alpha*other
  void scale(double alpha);
  double sq_norm() const;
};

struct ForwardResult {
  double r = 0.0;
  std::vector<double> coeff;     // k-simplex gate
  std::vector<double> v_reward;  // k-dimensional reward vector
};

/// v_reward = W_v emb_p + b_v; coeff = softmax(W2 relu(W1 emb_q + b1) + b2);
/// r = coeff . v_reward. coeff lies on the simplex, so r is always within
/// [min(v_reward), max(v_reward)].
ForwardResult reward_forward(const PairEmbedding& pair,
                             const RewardHeadParams& params);

struct RewardExample {
  PairEmbedding pair;
  double target = 0.0;  // expected reward w in [0, 1]
};

/// Mean over the batch of (r - target)^2.
double mse_loss(const std::vector<RewardExample>& batch,
                const RewardHeadParams& params);

/// Analytic gradient of mse_loss, same shape as the parameters.
RewardHeadParams reward_grad(const std::vector<RewardExample>& batch,
                             const RewardHeadParams& params);

/// Maps critic grades 0/1/2 to regression targets.
struct LabelMap {
  double on0 = 0.0;
  double on1 = 0.5;
  double on2 = 1.0;

  double map(int finalscore) const;
};

struct TrainConfig {
  double lr = 0.05;
  int epochs = 200;
  int batch_size = 16;
  std::uint64_t seed = 1;
  LabelMap label_map;
  double momentum = 0.0;  // optional; 0 disables
  // When training aborts on a non-finite loss, the last finite parameters are
  // saved here (if non-empty) before NumericError is thrown.
  std::string abort_checkpoint_path;
};

struct TrainResult {
  RewardHeadParams params;
  std::vector<double> epoch_loss;  // [0] is the initial full-dataset loss
};

/// Mini-batch gradient descent with seeded shuffling. Deterministic given
/// (example order, config, seed). epoch_loss entries are full-dataset losses.
TrainResult train_reward(const std::vector<RewardExample>& examples,
                         std::size_t k, std::size_t h, const TrainConfig& config);

/// Resolves feedback records against queries and corpus, embeds each pair,
/// and maps grades through the label map.
std::vector<RewardExample> build_examples(
    const std::vector<critic::FeedbackRecord>& feedback,
    const std::vector<critic::QueryRecord>& queries,
    const vecindex::Corpus& corpus, const embedding::TextEncoder& encoder,
    const LabelMap& label_map);

struct ResolvedPair {
  std::string query_id;
  std::string doc_id;
  std::string query_text;
  std::string doc_text;
};

struct ScoredPair {
  std::string query_id;
  std::string doc_id;
  double r = 0.0;
};

/// Batch reward_forward over resolved pairs, order-preserving.
std::vector<ScoredPair> score_pairs(const std::vector<ResolvedPair>& pairs,
                                    const embedding::TextEncoder& encoder,
                                    const RewardHeadParams& params);

void save_checkpoint(const RewardHeadParams& params, const std::string& path);
RewardHeadParams load_checkpoint(const std::string& path);

void save_loss_history_csv(const std::vector<double>& epoch_loss,
                           const std::string& path);

}  // namespace rewardrag::reward
