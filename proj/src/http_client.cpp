#include "mergectx/http_client.hpp"

#include <thread>

#include "httplib.h"
#include "mergectx/error.hpp"

namespace mergectx {

namespace {

// "https://host:port/v1" -> {"https://host:port", "/v1"}
std::pair<std::string, std::string> split_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint url lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

} // namespace

JsonHttpClient::JsonHttpClient(Endpoint endpoint, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), retry_(retry) {
    if (retry_.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
    std::tie(origin_, prefix_) = split_base_url(endpoint_.base_url);
}

nlohmann::json JsonHttpClient::post(std::string_view path, const nlohmann::json& body) const {
    const std::string full_path = prefix_ + std::string(path);
    const std::string payload = body.dump();
    auto backoff = retry_.initial_backoff;
    std::string last_error;

    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        httplib::Client client(origin_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!endpoint_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
        }

        auto res = client.Post(full_path, headers, payload, "application/json");
        if (!res) {
            last_error = "POST " + full_path + ": " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw TransportError("POST " + full_path + ": malformed JSON response: " + e.what(), false);
            }
        } else {
            last_error = "POST " + full_path + ": HTTP " + std::to_string(res->status);
            const bool retriable = res->status == 429 || res->status >= 500;
            if (!retriable) throw TransportError(last_error + ": " + res->body.substr(0, 200), false);
        }

        if (attempt < retry_.max_attempts) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<long long>(static_cast<double>(backoff.count()) * retry_.backoff_factor));
        }
    }
    throw TransportError(last_error + " (after " + std::to_string(retry_.max_attempts) + " attempts)", true);
}

} // namespace mergectx

namespace mergectx {

ChatCompletionClient::ChatCompletionClient(JsonHttpClient client, double temperature,
                                           std::optional<long long> seed, std::string path)
    : client_(std::move(client)), temperature_(temperature), seed_(seed), path_(std::move(path)) {}

nlohmann::json ChatCompletionClient::request_body(const std::string& user_content) const {
    nlohmann::json body{{"model", client_.endpoint().model},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", user_content}}})},
                        {"temperature", temperature_}};
    if (seed_) body["seed"] = *seed_;
    return body;
}

std::string ChatCompletionClient::complete(const std::string& user_content) const {
    const auto res = client_.post(path_, request_body(user_content));
    try {
        const auto& content = res.at("choices").at(0).at("message").at("content");
        return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw TransportError("chat response lacks choices[0].message.content", false);
    }
}

} // namespace mergectx
