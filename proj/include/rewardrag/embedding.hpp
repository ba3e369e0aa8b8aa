#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rewardrag::embedding {

enum class Role { kQuery, kDocument };
enum class Pooling { kFirstPosition, kLastPosition, kMean };

const char* to_string(Role role);
const char* to_string(Pooling pooling);
Pooling pooling_from_string(const std::string& s);

/// Declares how a plugin encodes text: output dimension, pooling convention,
/// and the task instructions prepended to queries and documents.
/// `name` selects the plugin ("hash" or "http").
struct EncoderSpec {
  std::string name;
  std::size_t dim = 0;
  Pooling pooling = Pooling::kMean;
  std::string query_instruction;
  std::string document_instruction;

  void validate() const;
  bool operator==(const EncoderSpec&) const = default;
};

struct EncodedText {
  std::vector<float> vector;
  Role source_role = Role::kQuery;
  bool normalized = false;
};

/// The token-sequence contract encoder plugins satisfy internally:
/// a begin marker, content tokens, an end marker, and optionally a separator
/// strictly between the markers. No tokenizer is exposed; this type documents
/// and validates the shape.
struct TokenizedInput {
  std::vector<std::string> tokens;
  std::optional<std::size_t> separator_pos;

  void validate() const;
};

/// Raw text-to-vector backend. Instruction handling, output validation and
/// locking live in the encoder wrapper, not here.
class EncoderPlugin {
 public:
  virtual ~EncoderPlugin() = default;
  virtual std::string name() const = 0;
  virtual bool thread_safe() const = 0;
  virtual std::vector<float> encode(const std::string& text, std::size_t dim,
                                    Pooling pooling) = 0;
};

/// Anything that can turn text into a fixed-dimension vector under a spec.
/// Implementations are safe to call from multiple threads: plugins that are
/// not internally thread-safe are serialized by the wrapper.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual const EncoderSpec& spec() const = 0;
  std::size_t dim() const { return spec().dim; }

  /// Prepends the role's instruction (single space joint, empty instruction
  /// is the identity prefix), then encodes. Deterministic in (spec, role, text).
  virtual EncodedText encode(Role role, const std::string& text) const = 0;

  /// Encodes raw text with no instruction prefix. Used for reward-model pair
  /// inputs, which carry their own [SEP] structure instead of instructions.
  virtual EncodedText encode_raw(const std::string& text) const = 0;
};

/// A plugin bound to one EncoderSpec.
class PluginEncoder final : public TextEncoder {
 public:
  PluginEncoder(EncoderSpec spec, std::shared_ptr<EncoderPlugin> plugin);

  const EncoderSpec& spec() const override { return spec_; }
  EncodedText encode(Role role, const std::string& text) const override;
  EncodedText encode_raw(const std::string& text) const override;

 private:
  std::vector<float> run_plugin(const std::string& text) const;

  EncoderSpec spec_;
  std::shared_ptr<EncoderPlugin> plugin_;
  mutable std::mutex mu_;  // taken only when the plugin is not thread-safe
};

/// Cosine of the angle between two vectors (accumulated in double).
/// Throws InvalidInputError on dimension mismatch and DegenerateInputError
/// when either vector has zero norm.
double cosine_sim(std::span<const float> a, std::span<const float> b);
double cosine_sim(const EncodedText& a, const EncodedText& b);

// ---------------------------------------------------------------------------
// Built-in plugin: deterministic hashed bag-of-ngrams featurizer.
//
// Exact scheme (an independent reimplementation must match byte-for-byte):
//   tokens   = whitespace-split words of the input text
//   sequence = <s>, tokens..., </s>          (the TokenizedInput contract)
//   for word w at 0-based content index i, with N content tokens:
//     bag bucket:        fnv1a64(w) % dim            += 1.0
//     positional bucket: fnv1a64(w + "@" + itoa(i)) % dim
//                                                     += 0.5 * pw(i)
//   where pw(i) = 1                  for mean pooling
//               = 1 / (1 + i)        for first-position pooling
//               = 1 / (1 + (N-1-i))  for last-position pooling
//   Accumulation in double, cast to float once at the end.
//
// The bag term carries topical similarity; the position-salted term makes
// the encoding order-sensitive.
// ---------------------------------------------------------------------------
class HashFeaturizer final : public EncoderPlugin {
 public:
  std::string name() const override { return "hash"; }
  bool thread_safe() const override { return true; }
  std::vector<float> encode(const std::string& text, std::size_t dim,
                            Pooling pooling) override;
};

/// The featurizer's token sequence for a given text, for contract inspection:
/// begin/end markers around the words, separator_pos set when a literal
/// "[SEP]" word is present.
TokenizedInput featurizer_tokenize(const std::string& text);

// ---------------------------------------------------------------------------
// Built-in plugin: HTTP embedding endpoint.
// POST {model, input: [text]} -> {data: [{embedding: [floats]}]}.
// ---------------------------------------------------------------------------
struct HttpEncoderOptions {
  std::string base_url;  // scheme://host[:port][/path], path defaults to /v1/embeddings
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  int timeout_s = 30;
};

class HttpEmbeddingPlugin final : public EncoderPlugin {
 public:
  explicit HttpEmbeddingPlugin(HttpEncoderOptions options);
  ~HttpEmbeddingPlugin() override;

  std::string name() const override { return "http"; }
  bool thread_safe() const override { return false; }
  std::vector<float> encode(const std::string& text, std::size_t dim,
                            Pooling pooling) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EncoderOptions {
  HttpEncoderOptions http;
};

/// Instantiates the plugin named by spec.name and binds it to the spec.
/// Unknown plugin names raise ConfigError.
std::shared_ptr<TextEncoder> make_encoder(const EncoderSpec& spec,
                                          const EncoderOptions& options = {});

}  // namespace rewardrag::embedding
