#include "wsforge/http_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace wsforge {

using nlohmann::json;

std::optional<std::string> api_token_from_env() {
  const char* token = std::getenv(kApiTokenEnv);
  if (!token || !*token) return std::nullopt;
  return std::string(token);
}

HttpCompletionClient::HttpCompletionClient(HttpClientConfig config) : config_(std::move(config)) {
  const auto& url = config_.endpoint;
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || (url.compare(0, scheme, "http") != 0 && url.compare(0, scheme, "https") != 0))
    throw ConfigError("endpoint must be an http:// or https:// URL: '" + url + "'");
  const auto path_start = url.find('/', scheme + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (config_.retries < 0) throw ConfigError("retries must be non-negative");
  if (!config_.sleep) config_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::size_t HttpCompletionClient::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

namespace {

std::vector<std::string> parse_choices(const std::string& body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array())
    throw TransportError("completion response lacks a 'choices' array");
  std::vector<std::string> out;
  for (const auto& choice : doc["choices"]) {
    if (choice.contains("text") && choice["text"].is_string()) {
      out.push_back(choice["text"].get<std::string>());
    } else if (choice.contains("message") && choice["message"].contains("content")) {
      out.push_back(choice["message"]["content"].get<std::string>());
    } else {
      throw TransportError("completion choice has neither 'text' nor 'message.content'");
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> HttpCompletionClient::complete(const PromptBundle& bundle) {
  {
    std::lock_guard lock(mutex_);
    ++calls_;
  }
  const json request{{"model", bundle.params.model_name},
                     {"prompt", bundle.text},
                     {"temperature", bundle.params.temperature},
                     {"max_tokens", bundle.params.max_tokens},
                     {"n", bundle.params.n_samples}};
  httplib::Headers headers;
  if (config_.api_token) headers.emplace("Authorization", "Bearer " + *config_.api_token);

  std::string last_error;
  auto backoff = config_.initial_backoff;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      config_.sleep(backoff);
      backoff *= 2;
    }
    httplib::Client cli(base_);
    cli.set_read_timeout(config_.read_timeout);
    cli.set_connection_timeout(std::chrono::seconds(10));
    auto res = cli.Post(path_, headers, request.dump(), "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw TransportError("completion endpoint returned HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 200));
    return parse_choices(res->body);
  }
  throw TransportError("completion request failed after " + std::to_string(config_.retries + 1) +
                       " attempts: " + last_error);
}

}  // namespace wsforge
