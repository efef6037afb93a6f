#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "wsforge/promptforge.hpp"

namespace wsforge {

inline constexpr const char* kApiTokenEnv = "SCRIPTORIUM_API_TOKEN";

struct HttpClientConfig {
  std::string endpoint;  // e.g. http://localhost:8080/v1/completions
  std::optional<std::string> api_token;
  int retries = 3;
  std::chrono::milliseconds initial_backoff{1000};  // doubles per retry: 1 s, 2 s, 4 s
  std::chrono::seconds read_timeout{120};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for
};

// Reads the bearer token from SCRIPTORIUM_API_TOKEN when set.
std::optional<std::string> api_token_from_env();

/// Client for an OpenAI-style completions endpoint.
///
/// Request (POST, JSON):
///   {"model": str, "prompt": str, "temperature": num, "max_tokens": int, "n": int}
/// Response:
///   {"choices": [{"text": str}, ...]}   ("message": {"content": str} also accepted)
///
/// Connection failures, 429 and 5xx responses are retried with exponential
/// backoff; other statuses fail immediately.
class HttpCompletionClient : public GenerationClient {
 public:
  explicit HttpCompletionClient(HttpClientConfig config);

  std::vector<std::string> complete(const PromptBundle& bundle) override;
  std::size_t call_count() const override;

 private:
  HttpClientConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
  mutable std::mutex mutex_;
  std::size_t calls_ = 0;
};

}  // namespace wsforge
