// HTTP-backed implementations of the embedding plugin and the chat client.
// Kept in one translation unit so httplib is compiled once.

#include <string>

#include "httplib.h"
#include "json.hpp"
#include "rewardrag/chat.hpp"
#include "rewardrag/embedding.hpp"
#include "rewardrag/errors.hpp"

using nlohmann::json;

namespace {

// Splits "scheme://host[:port]/path" into the client prefix and path.
void split_url(const std::string& url, std::string& origin, std::string& path) {
  std::size_t scheme_end = url.find("://");
  std::size_t path_start =
      url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    origin = url;
    path = "";
  } else {
    origin = url.substr(0, path_start);
    path = url.substr(path_start);
  }
}

httplib::Headers auth_headers(const std::string& api_key) {
  httplib::Headers headers;
  if (!api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key);
  }
  return headers;
}

}  // namespace

namespace rewardrag::embedding {

struct HttpEmbeddingPlugin::Impl {
  HttpEncoderOptions options;
  std::string origin;
  std::string path;
  std::unique_ptr<httplib::Client> client;

  explicit Impl(HttpEncoderOptions opts) : options(std::move(opts)) {
    if (options.base_url.empty()) {
      throw ConfigError("http encoder: base_url not configured");
    }
    split_url(options.base_url, origin, path);
    if (path.empty()) {
      path = "/v1/embeddings";
    }
    client = std::make_unique<httplib::Client>(origin);
    client->set_connection_timeout(options.timeout_s);
    client->set_read_timeout(options.timeout_s);
  }
};

HttpEmbeddingPlugin::HttpEmbeddingPlugin(HttpEncoderOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {}

HttpEmbeddingPlugin::~HttpEmbeddingPlugin() = default;

std::vector<float> HttpEmbeddingPlugin::encode(const std::string& text,
                                               std::size_t dim, Pooling) {
  json body = {{"model", impl_->options.model}, {"input", json::array({text})}};
  auto res = impl_->client->Post(impl_->path, auth_headers(impl_->options.api_key),
                                 body.dump(), "application/json");
  if (!res) {
    throw EncoderError("embedding endpoint unreachable: " +
                       httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EncoderError("embedding endpoint returned HTTP " +
                       std::to_string(res->status) + ": " + res->body);
  }
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::exception& e) {
    throw EncoderError(std::string("embedding endpoint sent invalid JSON: ") +
                       e.what());
  }
  if (!parsed.contains("data") || !parsed["data"].is_array() ||
      parsed["data"].empty() || !parsed["data"][0].contains("embedding")) {
    throw EncoderError("embedding endpoint response missing data[0].embedding");
  }
  const json& emb = parsed["data"][0]["embedding"];
  std::vector<float> v;
  v.reserve(emb.size());
  for (const auto& x : emb) {
    v.push_back(x.get<float>());
  }
  if (v.size() != dim) {
    throw EncoderError("embedding endpoint returned " + std::to_string(v.size()) +
                       " dims, expected " + std::to_string(dim));
  }
  return v;
}

}  // namespace rewardrag::embedding

namespace rewardrag::chat {

struct HttpChatClient::Impl {
  HttpChatOptions options;
  std::string origin;
  std::string path;

  explicit Impl(HttpChatOptions opts) : options(std::move(opts)) {
    if (options.url.empty()) {
      throw ConfigError("chat client: url not configured");
    }
    split_url(options.url, origin, path);
    if (path.empty()) {
      path = "/v1/chat/completions";
    }
  }
};

HttpChatClient::HttpChatClient(HttpChatOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {}

HttpChatClient::~HttpChatClient() = default;

std::string HttpChatClient::name() const {
  return impl_->options.model.empty() ? std::string("http-chat")
                                      : impl_->options.model;
}

std::string HttpChatClient::complete(const std::string& system_msg,
                                     const std::string& user_msg) {
  // One client per call: httplib clients are not thread-safe, and batch
  // collection issues completions from several worker threads.
  httplib::Client client(impl_->origin);
  client.set_connection_timeout(impl_->options.timeout_s);
  client.set_read_timeout(impl_->options.timeout_s);

  json body = {{"model", impl_->options.model},
               {"messages", json::array({json{{"role", "system"}, {"content", system_msg}},
                                         json{{"role", "user"}, {"content", user_msg}}})},
               {"temperature", impl_->options.temperature}};
  auto res = client.Post(impl_->path, auth_headers(impl_->options.api_key),
                         body.dump(), "application/json");
  if (!res) {
    throw TransportError("chat endpoint unreachable: " +
                         httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("chat endpoint returned HTTP " +
                         std::to_string(res->status) + ": " + res->body);
  }
  try {
    json parsed = json::parse(res->body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("chat endpoint sent malformed response: ") +
                         e.what());
  }
}

}  // namespace rewardrag::chat
