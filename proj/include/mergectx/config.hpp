#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mergectx/context.hpp"
#include "mergectx/fusion.hpp"
#include "mergectx/http_client.hpp"

namespace mergectx {

/// One remote service. The key itself never appears in a config file, only the
/// name of the environment variable holding it.
struct EndpointConfig {
    std::string base_url;
    std::string model;
    std::string api_key_env = "MERGECTX_API_KEY";
};

struct AppConfig {
    std::string tokenizer = "whitespace";
    MergeStrategy strategy = MergeStrategy::asymmetric;
    MergeSchedule schedule = MergeSchedule::hierarchical;
    double multiplier = 5.0;
    std::size_t b = 8;
    std::optional<std::filesystem::path> symmetric_prompt;
    std::optional<std::filesystem::path> asymmetric_prompt;
    std::optional<std::filesystem::path> answer_prompt;
    RetryPolicy retry;
    std::chrono::milliseconds timeout{60000};
    double temperature = 0.0;
    std::optional<long long> seed;
    /// Roles: "chat", "rerank", "logprob", "embeddings".
    std::map<std::string, EndpointConfig> endpoints;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Replaces every ${NAME}; an unset variable is an error.
std::string interpolate_env(std::string_view text, const EnvLookup& env = process_env);

/// Relative prompt paths resolve against `base_dir`.
AppConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {},
                       const EnvLookup& env = process_env);
AppConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

/// Canonical JSON form. Holds variable names, never secret values.
nlohmann::json config_to_json(const AppConfig& config);

/// 16 hex digits of FNV-1a over the canonical form.
std::string config_hash(const AppConfig& config);

/// Endpoint for a role. Unset fields fall back to MERGECTX_<ROLE>_BASE_URL /
/// MERGECTX_<ROLE>_MODEL, then MERGECTX_BASE_URL / MERGECTX_MODEL.
Endpoint resolve_endpoint(const AppConfig& config, const std::string& role, const EnvLookup& env = process_env);

PromptSet load_prompts(const AppConfig& config);

} // namespace mergectx
