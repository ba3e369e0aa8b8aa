#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rewardrag/critic.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/evalkit.hpp"
#include "rewardrag/mining.hpp"
#include "rewardrag/vecindex.hpp"

namespace rewardrag::finetune {

/// Affine projection over frozen base embeddings, shared between query and
/// document sides. Stands in for full encoder fine-tuning at desk scale.
struct AdapterParams {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  std::vector<double> a;  // dim_out x dim_in, row-major
  std::vector<double> b;  // dim_out

  void validate() const;
  static AdapterParams identity(std::size_t dim);

  void axpy(double alpha, const AdapterParams& other);
  void scale(double alpha);
  double sq_norm() const;

  std::vector<float> apply(std::span<const float> x) const;
};

void save_adapter(const AdapterParams& params, const std::string& path);
AdapterParams load_adapter(const std::string& path);

/// A mined triple resolved to frozen base embeddings.
struct ResolvedTriple {
  std::string query_id;
  std::vector<float> query_vec;
  std::string positive_id;
  std::vector<float> positive_vec;
  std::vector<std::string> negative_ids;
  std::vector<std::vector<float>> negative_vecs;
};

using ContrastiveBatch = std::vector<ResolvedTriple>;

/// Loss for one query from raw similarities, computed in stabilized
/// log-sum-exp form: log(1 + sum_j exp((sim_neg_j - sim_pos) / tau)).
double info_nce_from_sims(double sim_pos, std::span<const double> sim_negs,
                          double tau);

/// Batch-mean InfoNCE on adapter-projected cosine similarities. The negative
/// set for query i is its own hard negatives plus every other query's
/// positive and hard negatives in batch order, excluding any document whose
/// id equals query i's positive id. No other deduplication is applied.
double info_nce_loss(const ContrastiveBatch& batch, const AdapterParams& params,
                     double tau = 0.01);

/// Analytic gradient of info_nce_loss over the adapter.
AdapterParams info_nce_grad(const ContrastiveBatch& batch,
                            const AdapterParams& params, double tau);

struct AdapterTrainConfig {
  double lr = 0.001;
  int epochs = 40;
  int batch_size = 16;
  double tau = 0.01;
  std::uint64_t seed = 1;
  std::string abort_checkpoint_path;
};

struct AdapterTrainResult {
  AdapterParams params;
  std::vector<double> epoch_loss;  // mean of the epoch's batch losses
};

/// Identity-initialized adapter trained by seeded mini-batch descent.
/// Deterministic given (triples order, config, seed).
AdapterTrainResult train_adapter(const std::vector<mining::MinedTriple>& triples,
                                 const std::vector<critic::QueryRecord>& queries,
                                 const vecindex::Corpus& corpus,
                                 const embedding::TextEncoder& base,
                                 const AdapterTrainConfig& config);

/// Base encoder followed by the adapter projection.
class AdaptedEncoder final : public embedding::TextEncoder {
 public:
  AdaptedEncoder(std::shared_ptr<const embedding::TextEncoder> base,
                 AdapterParams adapter);

  const embedding::EncoderSpec& spec() const override { return spec_; }
  embedding::EncodedText encode(embedding::Role role,
                                const std::string& text) const override;
  embedding::EncodedText encode_raw(const std::string& text) const override;

 private:
  std::shared_ptr<const embedding::TextEncoder> base_;
  AdapterParams adapter_;
  embedding::EncoderSpec spec_;
};

/// Serialized as JSON {base_spec, adapter_path}; a relative adapter_path is
/// resolved against the JSON file's directory on load.
struct ComposedSpec {
  embedding::EncoderSpec base_spec;
  std::string adapter_path;
};

void save_composed_spec(const ComposedSpec& spec, const std::string& path);
ComposedSpec load_composed_spec(const std::string& path);
std::shared_ptr<embedding::TextEncoder> make_composed_encoder(
    const ComposedSpec& spec, const embedding::EncoderOptions& options = {});

// ---------------------------------------------------------------------------
// Synthetic topic-clustered dataset with known relevance.
//
// Each topic owns a private word list plus one answer token. Answer-bearing
// documents (the first ~30% per topic) are densely topical and contain the
// topic's answer token; distractor documents mix topic words with shared
// filler. Queries combine a question word with a few topic words; their
// expert answer is the topic's answer token. Qrels mark the answer-bearing
// documents of the query's topic at grade 2.
// ---------------------------------------------------------------------------
struct SyntheticConfig {
  int n_topics = 50;
  int docs_per_topic = 40;
  int queries_per_topic = 4;
  int vocab = 300;  // size of the shared filler vocabulary
  double noise = 0.25;
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  vecindex::Corpus corpus;
  std::vector<critic::QueryRecord> queries;
  evalkit::Qrels qrels;
};

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config);

}  // namespace rewardrag::finetune
