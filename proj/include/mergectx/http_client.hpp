#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace mergectx {

struct Endpoint {
    /// Scheme, host, optional port and optional path prefix,
    /// e.g. "http://localhost:8000/v1".
    std::string base_url;
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{60000};
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    double backoff_factor = 2.0;
};

/// POSTs JSON and parses JSON responses. Connection failures, 429 and 5xx are
/// retried with exponential backoff; other 4xx fail immediately.
/// Safe for concurrent use: each request opens its own connection.
class JsonHttpClient {
public:
    JsonHttpClient(Endpoint endpoint, RetryPolicy retry = {});

    nlohmann::json post(std::string_view path, const nlohmann::json& body) const;

    const Endpoint& endpoint() const { return endpoint_; }

private:
    Endpoint endpoint_;
    RetryPolicy retry_;
    std::string origin_;
    std::string prefix_;
};

} // namespace mergectx

namespace mergectx {

/// OpenAI-style chat endpoint: {model, messages:[{role, content}], temperature}
/// -> {choices:[{message:{content}}]}.
class ChatCompletionClient {
public:
    explicit ChatCompletionClient(JsonHttpClient client, double temperature = 0.0,
                                  std::optional<long long> seed = std::nullopt,
                                  std::string path = "/chat/completions");

    nlohmann::json request_body(const std::string& user_content) const;

    /// Returns the first choice's message content.
    std::string complete(const std::string& user_content) const;

    std::size_t max_in_flight() const { return max_in_flight_; }
    void set_max_in_flight(std::size_t n) { max_in_flight_ = n; }

private:
    JsonHttpClient client_;
    double temperature_;
    std::optional<long long> seed_;
    std::string path_;
    std::size_t max_in_flight_ = 64;
};

} // namespace mergectx
