// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "kdr/llm.hpp"
#include "kdr/pipeline.hpp"
#include "kdr/web_search.hpp"

namespace kdr {

struct EndpointSettings {
    std::string endpoint; ///< base URL, e.g. http://localhost:8000/v1
    std::string api_key;
    std::string model;
    int timeout_seconds = 120;
};

struct EmbedSettings : EndpointSettings {
    std::size_t dimension = 1024;
};

struct SearchSettings {
    std::string endpoint;          ///< HTTP web-search service
    std::string api_key;
    std::string fixtures;          ///< directory of offline `{title, url, body}` records
    std::string fulltext_endpoint; ///< optional external full-text index for the store
};

struct LimitSettings {
    int max_iterations = 3;
    int hops = 2;
    std::size_t concept_limit = 5;
    double sandbox_seconds = 30;
    std::size_t output_bytes = 64 * 1024;
    int text_rounds = 3;
    std::size_t hits_per_round = 3;
    std::size_t candidate_count = 10;
    int retry_attempts = 3;
};

struct DefaultSettings {
    std::string ns = "Research";
    std::string python = "python3";
    std::string transcript; ///< JSON-lines transcript path; in-memory when empty
    std::size_t mock_dimension = 64;
};

/// `{llm, embed, search, limits, defaults}`; every key is optional.
struct Config {
    EndpointSettings llm;
    EmbedSettings embed;
    SearchSettings search;
    LimitSettings limits;
    DefaultSettings defaults;
};

/// Throws SchemaViolation on wrong types or unknown sections.
Config config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const Config& c);

using EnvLookup = std::function<std::optional<std::string>(const char*)>;
std::optional<std::string> process_env(const char* name);

/// KDR_LLM_ENDPOINT, KDR_LLM_API_KEY, KDR_LLM_MODEL, KDR_EMBED_ENDPOINT and
/// KDR_EMBED_MODEL override the file. The embedding key falls back to the
/// chat key and the endpoint to the chat endpoint.
void apply_env(Config& c, const EnvLookup& env = process_env);

/// Reads `path`, else `KDR_CONFIG`, else defaults; then applies the environment.
/// Throws IoFailure, SchemaViolation.
Config load_config(const std::optional<std::string>& path, const EnvLookup& env = process_env);

/// Scripted mock when `mock_script` is set, otherwise the HTTP backends.
/// Throws Precondition when no chat endpoint is configured.
std::shared_ptr<LlmGateway> make_gateway(const Config& c, const std::optional<std::string>& mock_script);

/// Fixture directory first, then the HTTP service; null when neither is set.
std::unique_ptr<SearchBackend> make_search(const Config& c);

ComputationConfig computation_config(const Config& c);
TextCycleConfig text_cycle_config(const Config& c);

} // namespace kdr
