#include "mapo/remote_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mapo/errors.hpp"

namespace mapo {

RemoteClient::RemoteClient(RemoteEndpointConfig config) : config_(std::move(config)) {
  if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (config_.max_in_flight == 0) throw std::invalid_argument("max_in_flight must be >= 1");
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL needs a scheme: " + config_.url);
  const auto path_start = config_.url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.url.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : config_.url.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  if (config_.bearer_token.empty()) {
    if (const char* token = std::getenv(kEndpointTokenEnv)) config_.bearer_token = token;
  }
}

std::size_t RemoteClient::peak_in_flight() const {
  std::lock_guard lock(mutex_);
  return peak_in_flight_;
}

std::string RemoteClient::attempt(std::string_view prompt, const GenerationParams& params) const {
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout.count() - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  if (!config_.bearer_token.empty()) client.set_bearer_token_auth(config_.bearer_token);

  const nlohmann::json body = {{"prompt", std::string(prompt)},
                               {"temperature", params.temperature},
                               {"max_tokens", params.max_tokens},
                               {"seed", params.seed}};
  auto res = client.Post(base_path_ + "/v1/generate", body.dump(), "application/json");
  if (!res) throw EndpointError("endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw EndpointError("endpoint returned HTTP " + std::to_string(res->status));
  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
    throw EndpointError("malformed endpoint response body");
  }
  return reply["text"].get<std::string>();
}

std::string RemoteClient::complete(std::string_view prompt, const GenerationParams& params) const {
  params.validate();
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [this] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
    peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
  }
  struct Release {
    const RemoteClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  std::string last_error;
  double backoff = config_.initial_backoff_seconds;
  for (int i = 0; i < config_.max_attempts; ++i) {
    try {
      return attempt(prompt, params);
    } catch (const EndpointError& e) {
      last_error = e.what();
    }
    if (i + 1 < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw EndpointError(last_error + " (after " + std::to_string(config_.max_attempts) + " attempts)");
}

}  // namespace mapo
