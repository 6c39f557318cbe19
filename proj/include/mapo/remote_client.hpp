#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <string>

#include "mapo/language_model.hpp"

namespace mapo {

/// Environment variable holding the bearer token for remote endpoints.
inline constexpr const char* kEndpointTokenEnv = "MAPO_ENDPOINT_TOKEN";

struct RemoteEndpointConfig {
  /// Base URL, e.g. http://127.0.0.1:8080 or http://host/api
  std::string url;
  double timeout_seconds = 60.0;
  int max_attempts = 3;
  double initial_backoff_seconds = 0.5;
  std::size_t max_in_flight = 4;
  /// Empty means read kEndpointTokenEnv at construction.
  std::string bearer_token;
};

/// Client for POST {url}/v1/generate. Request body
/// {"prompt", "temperature", "max_tokens", "seed"}, response {"text"}.
/// Non-200 statuses, transport failures and malformed bodies are retried
/// with exponential backoff, then surface as EndpointError.
class RemoteClient : public TextModel {
 public:
  explicit RemoteClient(RemoteEndpointConfig config);

  std::string complete(std::string_view prompt, const GenerationParams& params) const override;

  const RemoteEndpointConfig& config() const { return config_; }
  std::size_t peak_in_flight() const;

 private:
  std::string attempt(std::string_view prompt, const GenerationParams& params) const;

  RemoteEndpointConfig config_;
  std::string scheme_host_port_;
  std::string base_path_;
  mutable std::mutex mutex_;
  mutable std::condition_variable slot_free_;
  mutable std::size_t in_flight_ = 0;
  mutable std::size_t peak_in_flight_ = 0;
};

}  // namespace mapo
