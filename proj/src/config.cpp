// SPDX-License-Identifier: Apache-2.0
#include "kdr/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>

#include "kdr/text_util.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace kdr {

namespace {

template <typename T>
void read(const json& obj, const char* section, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(Errc::schema_violation,
                    std::string("config ") + section + "." + key + ": unexpected " + obj.at(key).type_name());
    }
}

const json& section_of(const json& j, const char* name) {
    static const json empty = json::object();
    if (!j.contains(name)) return empty;
    const auto& s = j.at(name);
    if (!s.is_object()) throw Error(Errc::schema_violation, std::string("config ") + name + " must be an object");
    return s;
}

void read_endpoint(const json& s, const char* name, EndpointSettings& e) {
    read(s, name, "endpoint", e.endpoint);
    read(s, name, "api_key", e.api_key);
    read(s, name, "model", e.model);
    read(s, name, "timeout_seconds", e.timeout_seconds);
}

ordered_json endpoint_json(const EndpointSettings& e) {
    // The key itself never leaves the process.
    return ordered_json{{"endpoint", e.endpoint},
                        {"api_key", e.api_key.empty() ? "" : "***"},
                        {"model", e.model},
                        {"timeout_seconds", e.timeout_seconds}};
}

} // namespace

Config config_from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::schema_violation, "config must be a JSON object");
    static const std::set<std::string> known{"llm", "embed", "search", "limits", "defaults"};
    for (const auto& [k, _] : j.items()) {
        if (!known.count(k)) throw Error(Errc::schema_violation, "config: unknown section '" + k + "'");
    }
    Config c;
    read_endpoint(section_of(j, "llm"), "llm", c.llm);
    const auto& embed = section_of(j, "embed");
    read_endpoint(embed, "embed", c.embed);
    read(embed, "embed", "dimension", c.embed.dimension);

    const auto& search = section_of(j, "search");
    read(search, "search", "endpoint", c.search.endpoint);
    read(search, "search", "api_key", c.search.api_key);
    read(search, "search", "fixtures", c.search.fixtures);
    read(search, "search", "fulltext_endpoint", c.search.fulltext_endpoint);

    const auto& l = section_of(j, "limits");
    read(l, "limits", "max_iterations", c.limits.max_iterations);
    read(l, "limits", "hops", c.limits.hops);
    read(l, "limits", "concept_limit", c.limits.concept_limit);
    read(l, "limits", "sandbox_seconds", c.limits.sandbox_seconds);
    read(l, "limits", "output_bytes", c.limits.output_bytes);
    read(l, "limits", "text_rounds", c.limits.text_rounds);
    read(l, "limits", "hits_per_round", c.limits.hits_per_round);
    read(l, "limits", "candidate_count", c.limits.candidate_count);
    read(l, "limits", "retry_attempts", c.limits.retry_attempts);
    if (c.limits.max_iterations < 1 || c.limits.retry_attempts < 1 || c.limits.sandbox_seconds <= 0 ||
        c.limits.candidate_count == 0 || c.embed.dimension == 0) {
        throw Error(Errc::schema_violation, "config: limits must be positive");
    }

    const auto& d = section_of(j, "defaults");
    read(d, "defaults", "namespace", c.defaults.ns);
    read(d, "defaults", "python", c.defaults.python);
    read(d, "defaults", "transcript", c.defaults.transcript);
    read(d, "defaults", "mock_dimension", c.defaults.mock_dimension);
    return c;
}

ordered_json config_to_json(const Config& c) {
    ordered_json j;
    j["llm"] = endpoint_json(c.llm);
    j["embed"] = endpoint_json(c.embed);
    j["embed"]["dimension"] = c.embed.dimension;
    j["search"] = {{"endpoint", c.search.endpoint},
                   {"api_key", c.search.api_key.empty() ? "" : "***"},
                   {"fixtures", c.search.fixtures},
                   {"fulltext_endpoint", c.search.fulltext_endpoint}};
    j["limits"] = {{"max_iterations", c.limits.max_iterations}, {"hops", c.limits.hops},
                   {"concept_limit", c.limits.concept_limit},   {"sandbox_seconds", c.limits.sandbox_seconds},
                   {"output_bytes", c.limits.output_bytes},     {"text_rounds", c.limits.text_rounds},
                   {"hits_per_round", c.limits.hits_per_round}, {"candidate_count", c.limits.candidate_count},
                   {"retry_attempts", c.limits.retry_attempts}};
    j["defaults"] = {{"namespace", c.defaults.ns},
                     {"python", c.defaults.python},
                     {"transcript", c.defaults.transcript},
                     {"mock_dimension", c.defaults.mock_dimension}};
    return j;
}

std::optional<std::string> process_env(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

void apply_env(Config& c, const EnvLookup& env) {
    if (auto v = env("KDR_LLM_ENDPOINT")) c.llm.endpoint = *v;
    if (auto v = env("KDR_LLM_API_KEY")) c.llm.api_key = *v;
    if (auto v = env("KDR_LLM_MODEL")) c.llm.model = *v;
    if (auto v = env("KDR_EMBED_ENDPOINT")) c.embed.endpoint = *v;
    if (auto v = env("KDR_EMBED_MODEL")) c.embed.model = *v;
    if (c.embed.endpoint.empty()) c.embed.endpoint = c.llm.endpoint;
    if (c.embed.api_key.empty()) c.embed.api_key = c.llm.api_key;
}

Config load_config(const std::optional<std::string>& path, const EnvLookup& env) {
    std::optional<std::string> file = path;
    if (!file) file = env("KDR_CONFIG");
    Config c;
    if (file) {
        if (!std::filesystem::is_regular_file(*file)) throw Error(Errc::io_failure, "config file not found: " + *file);
        try {
            c = config_from_json(json::parse(text::read_file(*file)));
        } catch (const json::exception& e) {
            throw Error(Errc::schema_violation, *file + ": " + e.what());
        }
    }
    apply_env(c, env);
    return c;
}

std::shared_ptr<LlmGateway> make_gateway(const Config& c, const std::optional<std::string>& mock_script) {
    auto transcript = std::make_shared<Transcript>(c.defaults.transcript);
    if (mock_script) {
        return LlmGateway::mock(MockScript::load(*mock_script), c.defaults.mock_dimension, transcript);
    }
    if (c.llm.endpoint.empty()) {
        throw Error(Errc::precondition, "no chat endpoint configured (set KDR_LLM_ENDPOINT or pass --mock)");
    }
    auto to_http = [](const EndpointSettings& e) {
        return HttpEndpoint{e.endpoint, e.api_key, e.model, std::chrono::seconds(e.timeout_seconds)};
    };
    RetryPolicy retry;
    retry.attempts = c.limits.retry_attempts;
    return std::make_shared<LlmGateway>(std::make_shared<HttpChatBackend>(to_http(c.llm)),
                                        std::make_shared<HttpEmbeddingBackend>(to_http(c.embed), c.embed.dimension),
                                        transcript, retry);
}

std::unique_ptr<SearchBackend> make_search(const Config& c) {
    if (!c.search.fixtures.empty()) return std::make_unique<FixtureSearchBackend>(c.search.fixtures);
    if (!c.search.endpoint.empty()) return std::make_unique<HttpSearchBackend>(c.search.endpoint, c.search.api_key);
    return nullptr;
}

ComputationConfig computation_config(const Config& c) {
    ComputationConfig cc;
    cc.max_iterations = c.limits.max_iterations;
    cc.hops = c.limits.hops;
    cc.concept_limit = c.limits.concept_limit;
    cc.limits.wall_seconds = c.limits.sandbox_seconds;
    cc.limits.output_bytes = c.limits.output_bytes;
    cc.limits.interpreter = c.defaults.python;
    return cc;
}

TextCycleConfig text_cycle_config(const Config& c) {
    TextCycleConfig t;
    t.max_rounds = c.limits.text_rounds;
    t.hits_per_round = c.limits.hits_per_round;
    return t;
}

} // namespace kdr
