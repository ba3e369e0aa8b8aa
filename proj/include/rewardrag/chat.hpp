#pragma once

#include <memory>
#include <string>

namespace rewardrag::chat {

/// Environment variable holding the bearer token for hosted endpoints.
inline constexpr const char* kApiKeyEnv = "REWARD_RAG_API_KEY";

/// Chat-completion abstraction shared by the critic and the QA generator.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string name() const = 0;
  /// Whether callers may issue overlapping complete() calls from worker threads.
  virtual bool supports_concurrency() const = 0;
  /// Sends one system+user exchange, returns the assistant message content.
  /// Throws TransportError on HTTP/network failure.
  virtual std::string complete(const std::string& system_msg,
                               const std::string& user_msg) = 0;
};

struct HttpChatOptions {
  std::string url;    // full chat-completions URL
  std::string model;
  std::string api_key;
  double temperature = 0.0;
  int timeout_s = 60;
};

/// POST {model, messages: [{role:"system",...},{role:"user",...}], temperature}
/// and read the first choice's message content.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatOptions options);
  ~HttpChatClient() override;

  std::string name() const override;
  bool supports_concurrency() const override { return true; }
  std::string complete(const std::string& system_msg,
                       const std::string& user_msg) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rewardrag::chat
