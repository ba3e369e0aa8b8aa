#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rewardrag/embedding.hpp"

namespace rewardrag::vecindex {

struct Document {
  std::string doc_id;
  std::optional<std::string> title;
  std::string text;
};

/// The retrieval universe. doc_ids unique, texts non-empty.
struct Corpus {
  std::vector<Document> documents;

  void validate() const;
  /// Content hash over (id, title, text) of every document, in order.
  std::uint64_t content_hash() const;
  /// nullptr when the id is unknown.
  const Document* find(const std::string& doc_id) const;

 private:
  mutable std::unordered_map<std::string, std::size_t> lookup_;  // lazy
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t skipped = 0;
};

/// Reads JSONL {"id", "title", "text"}. Schema violations carry the line
/// number and abort unless skip_bad is set, in which case they are counted.
Corpus load_corpus_jsonl(const std::string& path, bool skip_bad = false,
                         IngestStats* stats = nullptr);
void save_corpus_jsonl(const Corpus& corpus, const std::string& path);

struct IndexMetadata {
  std::string created_at;  // optional; never stamped by builders (outputs stay byte-reproducible)
  std::uint64_t corpus_hash = 0;
  std::uint32_t version = 1;
};

/// Immutable after build; concurrent searches are safe.
struct RetrievalIndex {
  embedding::EncoderSpec encoder_spec;
  std::vector<std::string> doc_ids;
  std::vector<float> matrix;  // row-major, doc_ids.size() x encoder_spec.dim
  IndexMetadata metadata;

  std::size_t size() const { return doc_ids.size(); }
  std::span<const float> vector_of(std::size_t row) const;
};

struct RankedHit {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based
};

/// One entry per document, in corpus order. `threads` may partition the
/// encoding work; output is identical regardless of thread count.
RetrievalIndex build_index(const Corpus& corpus,
                           const embedding::TextEncoder& encoder,
                           int threads = 1);

/// Exact scan over all entries. min(k, size) hits ordered by
/// (score desc, doc_id asc), ranks 1..n.
std::vector<RankedHit> search(const RetrievalIndex& index,
                              const embedding::TextEncoder& encoder,
                              const std::string& query, int k);
std::vector<RankedHit> search_encoded(const RetrievalIndex& index,
                                      std::span<const float> query_vec, int k);

void save_index(const RetrievalIndex& index, const std::string& path);
RetrievalIndex load_index(const std::string& path);

}  // namespace rewardrag::vecindex
