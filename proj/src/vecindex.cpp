#include "rewardrag/vecindex.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "rewardrag/binio.hpp"
#include "rewardrag/errors.hpp"

using nlohmann::json;

namespace rewardrag::vecindex {

namespace {
constexpr char kIndexMagic[4] = {'R', 'R', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void Corpus::validate() const {
  std::unordered_set<std::string> seen;
  seen.reserve(documents.size());
  for (const auto& d : documents) {
    if (d.doc_id.empty()) {
      throw InvalidInputError("corpus: empty doc_id");
    }
    if (d.text.empty()) {
      throw InvalidInputError("corpus: empty text for doc_id " + d.doc_id);
    }
    if (!seen.insert(d.doc_id).second) {
      throw InvalidInputError("corpus: duplicate doc_id " + d.doc_id);
    }
  }
}

std::uint64_t Corpus::content_hash() const {
  std::uint64_t h = binio::kFnvOffset;
  for (const auto& d : documents) {
    h = binio::fnv1a64(d.doc_id, h);
    h = binio::fnv1a64("\x1f", h);
    h = binio::fnv1a64(d.title ? *d.title : "", h);
    h = binio::fnv1a64("\x1f", h);
    h = binio::fnv1a64(d.text, h);
    h = binio::fnv1a64("\x1e", h);
  }
  return h;
}

const Document* Corpus::find(const std::string& doc_id) const {
  if (lookup_.size() != documents.size()) {
    lookup_.clear();
    lookup_.reserve(documents.size());
    for (std::size_t i = 0; i < documents.size(); ++i) {
      lookup_.emplace(documents[i].doc_id, i);
    }
  }
  auto it = lookup_.find(doc_id);
  return it == lookup_.end() ? nullptr : &documents[it->second];
}

Corpus load_corpus_jsonl(const std::string& path, bool skip_bad, IngestStats* stats) {
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open corpus file: " + path);
  }
  Corpus corpus;
  IngestStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++local.lines;
    std::string problem;
    try {
      json j = json::parse(line);
      if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
        problem = "missing string field \"id\"";
      } else if (!j.contains("text") || !j["text"].is_string() ||
                 j["text"].get<std::string>().empty()) {
        problem = "missing non-empty string field \"text\"";
      } else {
        Document d;
        d.doc_id = j["id"].get<std::string>();
        d.text = j["text"].get<std::string>();
        if (j.contains("title") && j["title"].is_string()) {
          d.title = j["title"].get<std::string>();
        }
        corpus.documents.push_back(std::move(d));
        ++local.accepted;
      }
    } catch (const json::exception& e) {
      problem = e.what();
    }
    if (!problem.empty()) {
      if (!skip_bad) {
        throw InvalidInputError(path + ":" + std::to_string(line_no) +
                                ": bad corpus line: " + problem);
      }
      ++local.skipped;
    }
  }
  corpus.validate();
  if (stats) *stats = local;
  return corpus;
}

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open corpus file for writing: " + path);
  }
  for (const auto& d : corpus.documents) {
    json j;
    j["id"] = d.doc_id;
    j["title"] = d.title ? json(*d.title) : json(nullptr);
    j["text"] = d.text;
    out << j.dump() << '\n';
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

std::span<const float> RetrievalIndex::vector_of(std::size_t row) const {
  const std::size_t dim = encoder_spec.dim;
  return std::span<const float>(matrix.data() + row * dim, dim);
}

RetrievalIndex build_index(const Corpus& corpus,
                           const embedding::TextEncoder& encoder, int threads) {
  corpus.validate();
  if (corpus.documents.empty()) {
    throw InvalidInputError("build_index: corpus is empty");
  }
  const std::size_t n = corpus.documents.size();
  const std::size_t dim = encoder.dim();

  RetrievalIndex index;
  index.encoder_spec = encoder.spec();
  index.doc_ids.reserve(n);
  for (const auto& d : corpus.documents) {
    index.doc_ids.push_back(d.doc_id);
  }
  index.matrix.assign(n * dim, 0.0f);
  index.metadata.corpus_hash = corpus.content_hash();
  index.metadata.version = kIndexVersion;

  // Each worker writes into fixed slots, so output does not depend on the
  // thread count. Encoder failures are rethrown with the doc_id attached.
  auto encode_range = [&](std::size_t begin, std::size_t end,
                          std::exception_ptr& error) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        auto encoded =
            encoder.encode(embedding::Role::kDocument, corpus.documents[i].text);
        std::copy(encoded.vector.begin(), encoded.vector.end(),
                  index.matrix.begin() + static_cast<std::ptrdiff_t>(i * dim));
      } catch (const Error& e) {
        error = std::make_exception_ptr(EncoderError(
            "while encoding doc_id " + corpus.documents[i].doc_id + ": " + e.what()));
        return;
      } catch (...) {
        error = std::current_exception();
        return;
      }
    }
  };

  const int workers = std::max(1, threads);
  if (workers == 1 || n < 2) {
    std::exception_ptr error;
    encode_range(0, n, error);
    if (error) std::rethrow_exception(error);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) /
                              static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = static_cast<std::size_t>(w) * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(encode_range, begin, end,
                        std::ref(errors[static_cast<std::size_t>(w)]));
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return index;
}

std::vector<RankedHit> search_encoded(const RetrievalIndex& index,
                                      std::span<const float> query_vec, int k) {
  if (k < 1) {
    throw InvalidInputError("search: k must be >= 1");
  }
  if (index.size() == 0) {
    throw InvalidInputError("search: index is empty");
  }
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = embedding::cosine_sim(query_vec, index.vector_of(i));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t top = std::min(n, static_cast<std::size_t>(k));
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.doc_ids[a] < index.doc_ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top),
                    order.end(), better);
  std::vector<RankedHit> hits;
  hits.reserve(top);
  for (std::size_t r = 0; r < top; ++r) {
    hits.push_back({index.doc_ids[order[r]], scores[order[r]],
                    static_cast<int>(r + 1)});
  }
  return hits;
}

std::vector<RankedHit> search(const RetrievalIndex& index,
                              const embedding::TextEncoder& encoder,
                              const std::string& query, int k) {
  if (encoder.dim() != index.encoder_spec.dim) {
    throw InvalidInputError("search: encoder dim does not match index dim");
  }
  auto q = encoder.encode(embedding::Role::kQuery, query);
  return search_encoded(index, q.vector, k);
}

void save_index(const RetrievalIndex& index, const std::string& path) {
  binio::Writer w(path);
  w.bytes(kIndexMagic, 4);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.encoder_spec.dim));
  w.u64(index.doc_ids.size());

  json meta;
  meta["created_at"] = index.metadata.created_at;
  meta["corpus_hash"] = binio::hash_hex(index.metadata.corpus_hash);
  meta["encoder"] = {{"name", index.encoder_spec.name},
                     {"dim", index.encoder_spec.dim},
                     {"pooling", embedding::to_string(index.encoder_spec.pooling)},
                     {"query_instruction", index.encoder_spec.query_instruction},
                     {"document_instruction", index.encoder_spec.document_instruction}};
  w.str(meta.dump());

  for (std::size_t i = 0; i < index.doc_ids.size(); ++i) {
    w.str(index.doc_ids[i]);
    auto row = index.vector_of(i);
    for (float v : row) {
      w.f32(v);
    }
  }
  w.finish();
}

RetrievalIndex load_index(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kIndexMagic, 4) != 0) {
    throw UnsupportedFormatError("not an index file: " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion) {
    throw UnsupportedFormatError("unsupported index version " +
                                 std::to_string(version) + " in " + path);
  }
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();

  RetrievalIndex index;
  json meta;
  try {
    meta = json::parse(r.str());
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt index metadata in " + path + ": " + e.what());
  }
  index.metadata.created_at = meta.value("created_at", "");
  index.metadata.version = version;
  if (meta.contains("corpus_hash")) {
    index.metadata.corpus_hash =
        std::stoull(meta["corpus_hash"].get<std::string>(), nullptr, 16);
  }
  const json& enc = meta.at("encoder");
  index.encoder_spec.name = enc.at("name").get<std::string>();
  index.encoder_spec.dim = enc.at("dim").get<std::size_t>();
  index.encoder_spec.pooling =
      embedding::pooling_from_string(enc.at("pooling").get<std::string>());
  index.encoder_spec.query_instruction = enc.at("query_instruction").get<std::string>();
  index.encoder_spec.document_instruction =
      enc.at("document_instruction").get<std::string>();
  if (index.encoder_spec.dim != dim) {
    throw IntegrityError("index header dim disagrees with metadata in " + path);
  }

  index.doc_ids.reserve(count);
  index.matrix.assign(count * dim, 0.0f);
  for (std::uint64_t i = 0; i < count; ++i) {
    index.doc_ids.push_back(r.str());
    for (std::uint32_t d = 0; d < dim; ++d) {
      index.matrix[i * dim + d] = r.f32();
    }
  }
  r.verify_checksum();
  return index;
}

}  // namespace rewardrag::vecindex
