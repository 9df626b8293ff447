#include "mergectx/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "mergectx/error.hpp"

namespace mergectx {

namespace {

nlohmann::json interpolate_tree(const nlohmann::json& j, const EnvLookup& env) {
    if (j.is_string()) return interpolate_env(j.get<std::string>(), env);
    if (j.is_array()) {
        auto out = nlohmann::json::array();
        for (const auto& v : j) out.push_back(interpolate_tree(v, env));
        return out;
    }
    if (j.is_object()) {
        auto out = nlohmann::json::object();
        for (const auto& [k, v] : j.items()) out[k] = interpolate_tree(v, env);
        return out;
    }
    return j;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown config key '" + where + k + "'");
    }
}

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base_dir) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

std::string interpolate_env(std::string_view text, const EnvLookup& env) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find("${", pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        const auto close = text.find('}', open + 2);
        if (close == std::string_view::npos) throw ConfigError("unterminated ${ in config value");
        out.append(text.substr(pos, open - pos));
        const std::string name(text.substr(open + 2, close - open - 2));
        const auto value = env(name);
        if (!value) throw ConfigError("environment variable " + name + " is not set");
        out += *value;
        pos = close + 1;
    }
    return out;
}

AppConfig parse_config(const nlohmann::json& raw, const std::filesystem::path& base_dir, const EnvLookup& env) {
    if (!raw.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(raw, {"tokenizer", "defaults", "prompts", "retry", "endpoints", "temperature", "seed"}, "");
    const auto j = interpolate_tree(raw, env);
    AppConfig c;
    try {
        c.tokenizer = j.value("tokenizer", c.tokenizer);
        if (c.tokenizer != "whitespace") throw ConfigError("unsupported tokenizer '" + c.tokenizer + "'");
        if (j.contains("defaults")) {
            const auto& d = j["defaults"];
            reject_unknown(d, {"strategy", "schedule", "multiplier", "b"}, "defaults.");
            if (d.contains("strategy")) c.strategy = parse_strategy(d["strategy"].get<std::string>());
            if (d.contains("schedule")) c.schedule = parse_schedule(d["schedule"].get<std::string>());
            c.multiplier = d.value("multiplier", c.multiplier);
            c.b = d.value("b", c.b);
        }
        if (j.contains("prompts")) {
            const auto& p = j["prompts"];
            reject_unknown(p, {"symmetric", "asymmetric", "answer"}, "prompts.");
            if (p.contains("symmetric") && !p["symmetric"].is_null()) c.symmetric_prompt = resolve_path(p["symmetric"], base_dir);
            if (p.contains("asymmetric") && !p["asymmetric"].is_null()) c.asymmetric_prompt = resolve_path(p["asymmetric"], base_dir);
            if (p.contains("answer") && !p["answer"].is_null()) c.answer_prompt = resolve_path(p["answer"], base_dir);
        }
        if (j.contains("retry")) {
            const auto& r = j["retry"];
            reject_unknown(r, {"max_attempts", "initial_backoff_ms", "backoff_factor", "timeout_ms"}, "retry.");
            c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
            c.retry.initial_backoff = std::chrono::milliseconds(r.value("initial_backoff_ms", 200));
            c.retry.backoff_factor = r.value("backoff_factor", c.retry.backoff_factor);
            c.timeout = std::chrono::milliseconds(r.value("timeout_ms", 60000));
        }
        c.temperature = j.value("temperature", c.temperature);
        if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<long long>();
        if (j.contains("endpoints")) {
            for (const auto& [role, e] : j["endpoints"].items()) {
                if (e.contains("api_key"))
                    throw ConfigError("endpoints." + role + ".api_key: keys are read from the environment; set api_key_env");
                reject_unknown(e, {"base_url", "model", "api_key_env"}, "endpoints." + role + ".");
                EndpointConfig ec;
                ec.base_url = e.value("base_url", "");
                ec.model = e.value("model", "");
                ec.api_key_env = e.value("api_key_env", ec.api_key_env);
                c.endpoints[role] = ec;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!(c.multiplier > 0.0)) throw ConfigError("defaults.multiplier must be positive");
    if (c.b < 1) throw ConfigError("defaults.b must be at least 1");
    if (c.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
    return c;
}

AppConfig load_config(const std::filesystem::path& path, const EnvLookup& env) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path(), env);
}

nlohmann::json config_to_json(const AppConfig& c) {
    auto opt_path = [](const auto& p) { return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["tokenizer"] = c.tokenizer;
    j["defaults"] = {{"strategy", to_string(c.strategy)},
                     {"schedule", to_string(c.schedule)},
                     {"multiplier", c.multiplier},
                     {"b", c.b}};
    j["prompts"] = {{"symmetric", opt_path(c.symmetric_prompt)},
                    {"asymmetric", opt_path(c.asymmetric_prompt)},
                    {"answer", opt_path(c.answer_prompt)}};
    j["retry"] = {{"max_attempts", c.retry.max_attempts},
                  {"initial_backoff_ms", c.retry.initial_backoff.count()},
                  {"backoff_factor", c.retry.backoff_factor},
                  {"timeout_ms", c.timeout.count()}};
    j["temperature"] = c.temperature;
    j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    auto eps = nlohmann::json::object();
    for (const auto& [role, e] : c.endpoints)
        eps[role] = {{"base_url", e.base_url}, {"model", e.model}, {"api_key_env", e.api_key_env}};
    j["endpoints"] = eps;
    return j;
}

std::string config_hash(const AppConfig& config) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : config_to_json(config).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Endpoint resolve_endpoint(const AppConfig& config, const std::string& role, const EnvLookup& env) {
    EndpointConfig ec;
    if (auto it = config.endpoints.find(role); it != config.endpoints.end()) ec = it->second;
    const auto prefix = "MERGECTX_" + upper(role) + "_";
    auto fallback = [&](std::string& field, const std::string& suffix) {
        if (!field.empty()) return;
        if (auto v = env(prefix + suffix)) field = *v;
        else if (auto g = env("MERGECTX_" + suffix)) field = *g;
    };
    fallback(ec.base_url, "BASE_URL");
    fallback(ec.model, "MODEL");
    if (ec.base_url.empty())
        throw ConfigError("no base URL for the " + role + " endpoint; set " + prefix + "BASE_URL or MERGECTX_BASE_URL");
    Endpoint ep;
    ep.base_url = ec.base_url;
    ep.model = ec.model;
    ep.api_key = env(ec.api_key_env).value_or("");
    ep.timeout = config.timeout;
    return ep;
}

PromptSet load_prompts(const AppConfig& config) {
    PromptSet set;
    if (config.symmetric_prompt) set.symmetric = load_template(TemplateKind::symmetric_merge, *config.symmetric_prompt);
    if (config.asymmetric_prompt)
        set.asymmetric = load_template(TemplateKind::asymmetric_merge, *config.asymmetric_prompt);
    if (config.answer_prompt) set.answer = load_template(TemplateKind::answer_generation, *config.answer_prompt);
    return set;
}

} // namespace mergectx
