#include "rewardrag/embedding.hpp"

#include <cmath>
#include <cstring>

#include "rewardrag/binio.hpp"
#include "rewardrag/errors.hpp"

namespace rewardrag::embedding {

const char* to_string(Role role) {
  return role == Role::kQuery ? "query" : "document";
}

const char* to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::kFirstPosition:
      return "first-position";
    case Pooling::kLastPosition:
      return "last-position";
    case Pooling::kMean:
      return "mean";
  }
  return "mean";
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "first-position") return Pooling::kFirstPosition;
  if (s == "last-position") return Pooling::kLastPosition;
  if (s == "mean") return Pooling::kMean;
  throw ConfigError("unknown pooling mode: " + s);
}

void EncoderSpec::validate() const {
  if (name.empty()) {
    throw ConfigError("encoder spec: name is empty");
  }
  if (dim == 0) {
    throw ConfigError("encoder spec: dim must be positive");
  }
}

void TokenizedInput::validate() const {
  if (tokens.size() < 2) {
    throw InvalidInputError("tokenized input: need begin and end markers");
  }
  if (separator_pos) {
    if (*separator_pos == 0 || *separator_pos >= tokens.size() - 1) {
      throw InvalidInputError(
          "tokenized input: separator must lie strictly between the markers");
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

}  // namespace

PluginEncoder::PluginEncoder(EncoderSpec spec, std::shared_ptr<EncoderPlugin> plugin)
    : spec_(std::move(spec)), plugin_(std::move(plugin)) {
  spec_.validate();
}

std::vector<float> PluginEncoder::run_plugin(const std::string& text) const {
  std::vector<float> v;
  if (plugin_->thread_safe()) {
    v = plugin_->encode(text, spec_.dim, spec_.pooling);
  } else {
    std::lock_guard<std::mutex> lock(mu_);
    v = plugin_->encode(text, spec_.dim, spec_.pooling);
  }
  if (v.size() != spec_.dim) {
    throw EncoderError("plugin '" + plugin_->name() + "' returned " +
                       std::to_string(v.size()) + " dims, spec declares " +
                       std::to_string(spec_.dim));
  }
  return v;
}

EncodedText PluginEncoder::encode(Role role, const std::string& text) const {
  if (trim(text).empty()) {
    throw InvalidInputError("encode: text is empty");
  }
  const std::string& instruction = role == Role::kQuery
                                       ? spec_.query_instruction
                                       : spec_.document_instruction;
  // The joining operator is plain concatenation with one separating space;
  // an empty instruction is the identity prefix.
  std::string full = instruction.empty() ? text : instruction + " " + text;
  EncodedText out;
  out.vector = run_plugin(full);
  out.source_role = role;
  out.normalized = false;
  return out;
}

EncodedText PluginEncoder::encode_raw(const std::string& text) const {
  if (trim(text).empty()) {
    throw InvalidInputError("encode: text is empty");
  }
  EncodedText out;
  out.vector = run_plugin(text);
  out.source_role = Role::kQuery;
  out.normalized = false;
  return out;
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw InvalidInputError("cosine_sim: dimension mismatch (" +
                            std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInputError("cosine_sim: zero-norm vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine_sim(const EncodedText& a, const EncodedText& b) {
  return cosine_sim(std::span<const float>(a.vector),
                    std::span<const float>(b.vector));
}

std::vector<float> HashFeaturizer::encode(const std::string& text, std::size_t dim,
                                          Pooling pooling) {
  if (dim == 0) {
    throw EncoderError("hash featurizer: dim must be positive");
  }
  const std::vector<std::string> words = split_ws(text);
  std::vector<double> acc(dim, 0.0);
  const std::size_t n = words.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& w = words[i];
    acc[binio::fnv1a64(w) % dim] += 1.0;
    const std::uint64_t hp = binio::fnv1a64(w + "@" + std::to_string(i));
    double pw = 1.0;
    if (pooling == Pooling::kFirstPosition) {
      pw = 1.0 / (1.0 + static_cast<double>(i));
    } else if (pooling == Pooling::kLastPosition) {
      pw = 1.0 / (1.0 + static_cast<double>(n - 1 - i));
    }
    acc[hp % dim] += 0.5 * pw;
  }
  std::vector<float> out(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    out[d] = static_cast<float>(acc[d]);
  }
  return out;
}

TokenizedInput featurizer_tokenize(const std::string& text) {
  TokenizedInput t;
  t.tokens.push_back("<s>");
  for (auto& w : split_ws(text)) {
    if (w == "[SEP]" && !t.separator_pos) {
      t.separator_pos = t.tokens.size();
    }
    t.tokens.push_back(std::move(w));
  }
  t.tokens.push_back("</s>");
  return t;
}

std::shared_ptr<TextEncoder> make_encoder(const EncoderSpec& spec,
                                          const EncoderOptions& options) {
  spec.validate();
  if (spec.name == "hash") {
    return std::make_shared<PluginEncoder>(spec, std::make_shared<HashFeaturizer>());
  }
  if (spec.name == "http") {
    return std::make_shared<PluginEncoder>(
        spec, std::make_shared<HttpEmbeddingPlugin>(options.http));
  }
  throw ConfigError("unknown encoder plugin: " + spec.name);
}

}  // namespace rewardrag::embedding
