#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lookback/backend.hpp"
#include "lookback/base64.hpp"
#include "lookback/error.hpp"
#include "lookback/util.hpp"

namespace lookback {

/// Name of the environment variable holding the bearer token for HTTP backends.
inline constexpr const char* kApiKeyEnvVar = "LOOKBACK_API_KEY";

namespace detail {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;  // defaults to /v1/chat/completions
};

inline EndpointParts split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::config_error, "endpoint must include a scheme, got \"" + endpoint + "\"");
  }
  auto path_start = endpoint.find('/', scheme_end + 3);
  EndpointParts parts;
  if (path_start == std::string::npos) {
    parts.base = endpoint;
    parts.path = "/v1/chat/completions";
  } else {
    parts.base = endpoint.substr(0, path_start);
    parts.path = endpoint.substr(path_start);
    if (parts.path == "/") parts.path = "/v1/chat/completions";
  }
  return parts;
}

inline std::string mime_for_image(const std::string& path) {
  std::string lower = to_lower_ascii(path);
  auto ends_with = [&](const char* suffix) {
    std::string s(suffix);
    return lower.size() >= s.size() && lower.compare(lower.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".jpg") || ends_with(".jpeg")) return "image/jpeg";
  if (ends_with(".webp")) return "image/webp";
  if (ends_with(".gif")) return "image/gif";
  return "image/png";
}

/// Counting semaphore with a runtime-configured limit.
class ParallelGate {
 public:
  void configure(int limit) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (limit_ == 0) limit_ = limit < 1 ? 1 : limit;
  }
  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
  }
  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int limit_ = 0;
  int in_flight_ = 0;
};

} // namespace detail

/// Resolves an image reference to a data URI. Data URIs pass through; file
/// paths are read and base64-encoded.
inline std::string image_ref_to_data_uri(const std::string& image_ref) {
  if (image_ref.rfind("data:", 0) == 0) return image_ref;
  std::error_code ec;
  if (!std::filesystem::exists(image_ref, ec)) {
    throw Error(Errc::image_unresolvable, "image not found: " + image_ref);
  }
  std::string bytes;
  try {
    bytes = read_file_bytes(image_ref);
  } catch (const Error&) {
    throw Error(Errc::image_unresolvable, "image not readable: " + image_ref);
  }
  return "data:" + detail::mime_for_image(image_ref) + ";base64," + base64_encode(bytes);
}

/// Chat-completion client over the de-facto JSON wire shape. Images are
/// inlined as base64 data URIs; the first choice's message text is returned.
class HttpBackend : public Backend {
 public:
  HttpBackend() : bearer_token_(token_from_env()) {}
  explicit HttpBackend(std::string bearer_token) : bearer_token_(std::move(bearer_token)) {}

  static std::string token_from_env() {
    const char* v = std::getenv(kApiKeyEnvVar);
    return v ? std::string(v) : std::string();
  }

  /// Request body, exposed so tests can pin the wire shape.
  static nlohmann::json build_request(const std::vector<ChatMessage>& messages,
                                      const BackendConfig& config) {
    nlohmann::json body;
    body["model"] = config.model;
    body["max_tokens"] = config.max_output_tokens;
    body["temperature"] = config.temperature;
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
      nlohmann::json content = nlohmann::json::array();
      for (const auto& p : m.parts) {
        if (const auto* t = std::get_if<TextPart>(&p)) {
          content.push_back({{"type", "text"}, {"text", t->text}});
        } else {
          const auto& ref = std::get<ImagePart>(p).image_ref;
          content.push_back(
              {{"type", "image_url"}, {"image_url", {{"url", image_ref_to_data_uri(ref)}}}});
        }
      }
      msgs.push_back({{"role", role_name(m.role)}, {"content", content}});
    }
    body["messages"] = msgs;
    return body;
  }

  /// Extracts choices[0].message.content; accepts either a plain string or an
  /// array of text parts.
  static std::string parse_response(const std::string& body) {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty()) {
      throw Error(Errc::bad_response_shape, "response has no choices array");
    }
    const auto& choice = j["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object() ||
        !choice["message"].contains("content")) {
      throw Error(Errc::bad_response_shape, "choice has no message.content");
    }
    const auto& content = choice["message"]["content"];
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string out;
      for (const auto& part : content) {
        if (part.is_object() && part.contains("text") && part["text"].is_string()) {
          out += part["text"].get<std::string>();
        }
      }
      return out;
    }
    throw Error(Errc::bad_response_shape, "message.content is neither string nor array");
  }

  std::string complete(const std::vector<ChatMessage>& messages,
                       const BackendConfig& config) override {
    config.check();
    if (messages.empty()) throw Error(Errc::invalid_argument, "messages must be nonempty");
    gate_.configure(config.max_parallel);
    gate_.acquire();
    struct Release {
      detail::ParallelGate* g;
      ~Release() { g->release(); }
    } release{&gate_};

    auto endpoint = detail::split_endpoint(config.endpoint);
    std::string payload = build_request(messages, config).dump();

    // A Transport failure is retried with the identical payload; a Timeout is
    // not retried by default.
    int attempts = 1 + config.retries;
    Error last = Error(Errc::transport, "no attempt made");
    for (int attempt = 0; attempt < attempts; ++attempt) {
      try {
        return attempt_once(endpoint, payload, config);
      } catch (const Error& e) {
        if (e.code() == Errc::timeout) throw;
        if (e.code() != Errc::transport) throw;
        last = e;
      }
    }
    throw last;
  }

 private:
  std::string attempt_once(const detail::EndpointParts& endpoint, const std::string& payload,
                           const BackendConfig& config) {
    httplib::Client client(endpoint.base);
    auto secs = static_cast<time_t>(config.timeout_s);
    auto usecs = static_cast<time_t>((config.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!bearer_token_.empty()) {
      headers.emplace("Authorization", "Bearer " + bearer_token_);
    }

    auto started = std::chrono::steady_clock::now();
    auto result = client.Post(endpoint.path, headers, payload, "application/json");
    if (!result) {
      double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      auto err = result.error();
      bool timed_out = err == httplib::Error::ConnectionTimeout ||
                       (err == httplib::Error::Read && elapsed >= config.timeout_s * 0.9);
      if (timed_out) {
        throw Error(Errc::timeout, "request timed out after " + std::to_string(elapsed) + "s");
      }
      throw Error(Errc::transport, "request failed: " + httplib::to_string(err));
    }
    if (result->status < 200 || result->status >= 300) {
      throw Error(Errc::transport, "HTTP status " + std::to_string(result->status))
          .with_index(result->status);
    }
    return parse_response(result->body);
  }

  std::string bearer_token_;
  detail::ParallelGate gate_;
};

} // namespace lookback
