// SPDX-License-Identifier: Apache-2.0
#include "kdr/llm.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <thread>

#include "kdr/error.hpp"
#include "kdr/http.hpp"
#include "kdr/text_util.hpp"

namespace kdr {

using nlohmann::json;

std::string_view role_name(Role r) noexcept {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

// ---------------------------------------------------------------------------
// Mock

MockScript MockScript::from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::schema_violation, "mock script must be a JSON object");
    MockScript script;
    if (auto it = j.find("default_response"); it != j.end()) {
        if (!it->is_string()) throw Error(Errc::schema_violation, "default_response must be a string");
        script.default_response = it->get<std::string>();
    }
    if (auto it = j.find("rules"); it != j.end()) {
        if (!it->is_array()) throw Error(Errc::schema_violation, "rules must be an array");
        for (const auto& r : *it) {
            if (!r.is_object()) throw Error(Errc::schema_violation, "rule must be an object");
            MockRule rule;
            if (auto c = r.find("contains"); c != r.end()) {
                if (c->is_string()) {
                    rule.contains.push_back(c->get<std::string>());
                } else if (c->is_array()) {
                    for (const auto& s : *c) {
                        if (!s.is_string()) throw Error(Errc::schema_violation, "contains entries must be strings");
                        rule.contains.push_back(s.get<std::string>());
                    }
                } else {
                    throw Error(Errc::schema_violation, "contains must be a string or array of strings");
                }
            }
            if (auto re = r.find("regex"); re != r.end()) {
                if (!re->is_string()) throw Error(Errc::schema_violation, "regex must be a string");
                rule.regex = re->get<std::string>();
                try {
                    std::regex probe(*rule.regex);
                } catch (const std::regex_error& e) {
                    throw Error(Errc::schema_violation, "invalid regex '" + *rule.regex + "': " + e.what());
                }
            }
            if (auto resp = r.find("responses"); resp != r.end()) {
                if (!resp->is_array()) throw Error(Errc::schema_violation, "responses must be an array");
                for (const auto& s : *resp) {
                    if (!s.is_string()) throw Error(Errc::schema_violation, "responses must be strings");
                    rule.responses.push_back(s.get<std::string>());
                }
            }
            if (auto resp = r.find("response"); resp != r.end()) {
                if (!resp->is_string()) throw Error(Errc::schema_violation, "response must be a string");
                rule.responses.push_back(resp->get<std::string>());
            }
            if (rule.responses.empty()) throw Error(Errc::schema_violation, "rule without responses");
            script.rules.push_back(std::move(rule));
        }
    }
    return script;
}

MockScript MockScript::load(const std::string& path) {
    json j;
    try {
        j = json::parse(text::read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(Errc::schema_violation, path + ": " + e.what());
    }
    return from_json(j);
}

MockChatBackend::MockChatBackend(MockScript script)
    : script_(std::move(script)), cursors_(script_.rules.size(), 0) {}

std::string MockChatBackend::flatten(const std::vector<ChatMessage>& messages) {
    std::string out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (i) out += "\n\n";
        out += messages[i].content;
    }
    return out;
}

std::string MockChatBackend::complete(const std::vector<ChatMessage>& messages, const GenerationConfig&) {
    const std::string prompt = flatten(messages);
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < script_.rules.size(); ++i) {
        const auto& rule = script_.rules[i];
        bool match = true;
        for (const auto& needle : rule.contains) {
            if (prompt.find(needle) == std::string::npos) {
                match = false;
                break;
            }
        }
        if (match && rule.regex) match = std::regex_search(prompt, std::regex(*rule.regex));
        if (!match) continue;
        std::size_t at = std::min(cursors_[i], rule.responses.size() - 1);
        ++cursors_[i];
        return rule.responses[at];
    }
    return script_.default_response;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

std::vector<EmbeddingVector> MockEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        std::uint64_t state = text::fnv1a64(t);
        EmbeddingVector v(dimension_);
        double norm = 0;
        for (auto& x : v) {
            x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        out.push_back(std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

http::Headers auth_headers(const HttpEndpoint& ep) {
    http::Headers h;
    if (!ep.api_key.empty()) h.emplace_back("Authorization", "Bearer " + ep.api_key);
    return h;
}

bool mentions_context_length(const std::string& body) {
    const auto lower = text::to_lower(body);
    return lower.find("context_length") != std::string::npos || lower.find("context length") != std::string::npos ||
           lower.find("maximum context") != std::string::npos || lower.find("too many tokens") != std::string::npos;
}

json parse_body(const std::string& body, const std::string& what) {
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw Error(Errc::backend_unavailable, what + ": malformed JSON response: " + e.what());
    }
}

void check_status(const http::Response& res, const std::string& what) {
    if (res.status >= 200 && res.status < 300) return;
    if (res.status == 400 || res.status == 413) {
        if (mentions_context_length(res.body)) throw Error(Errc::context_too_long, what + ": " + res.body);
    }
    throw Error(Errc::backend_unavailable, what + ": HTTP " + std::to_string(res.status) + ": " + res.body);
}

} // namespace

json HttpChatBackend::request_body(const std::string& model, const std::vector<ChatMessage>& messages,
                                   const GenerationConfig& cfg) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    json body = {{"model", model}, {"messages", msgs}, {"temperature", cfg.temperature}, {"max_tokens", cfg.max_tokens}};
    if (!cfg.stop_sequences.empty()) body["stop"] = cfg.stop_sequences;
    return body;
}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg) {
    const auto body = request_body(endpoint_.model, messages, cfg).dump();
    auto res = http::post_json(endpoint_.base_url, "/chat/completions", body, auth_headers(endpoint_), endpoint_.timeout);
    check_status(res, "chat completion");
    auto j = parse_body(res.body, "chat completion");
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        return content.is_null() ? std::string{} : content.get<std::string>();
    } catch (const json::exception& e) {
        throw Error(Errc::backend_unavailable, std::string("chat completion: unexpected response shape: ") + e.what());
    }
}

std::vector<EmbeddingVector> HttpEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    json body = {{"model", endpoint_.model}, {"input", texts}};
    auto res = http::post_json(endpoint_.base_url, "/embeddings", body.dump(), auth_headers(endpoint_), endpoint_.timeout);
    check_status(res, "embeddings");
    auto j = parse_body(res.body, "embeddings");
    std::vector<EmbeddingVector> out(texts.size());
    try {
        const auto& data = j.at("data");
        if (data.size() != texts.size()) {
            throw Error(Errc::backend_unavailable, "embeddings: expected " + std::to_string(texts.size()) +
                                                       " vectors, got " + std::to_string(data.size()));
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t idx = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
            if (idx >= out.size()) throw Error(Errc::backend_unavailable, "embeddings: index out of range");
            out[idx] = data[i].at("embedding").get<EmbeddingVector>();
            if (out[idx].size() != dimension_) {
                throw Error(Errc::backend_unavailable, "embeddings: dimension " + std::to_string(out[idx].size()) +
                                                           " differs from declared " + std::to_string(dimension_));
            }
        }
    } catch (const json::exception& e) {
        throw Error(Errc::backend_unavailable, std::string("embeddings: unexpected response shape: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transcript

Transcript::Transcript(std::string path) : path_(std::move(path)) {
    if (!path_.empty()) {
        std::ofstream f(path_, std::ios::trunc);
        if (!f) throw Error(Errc::io_failure, "cannot open transcript " + path_);
    }
}

void Transcript::record(json entry) {
    std::lock_guard lock(mutex_);
    entry["seq"] = seq_++;
    if (!path_.empty()) {
        std::ofstream f(path_, std::ios::app);
        if (!f) throw Error(Errc::io_failure, "cannot append to transcript " + path_);
        f << entry.dump() << '\n';
    }
    entries_.push_back(std::move(entry));
}

std::vector<json> Transcript::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

// ---------------------------------------------------------------------------
// Gateway

LlmGateway::LlmGateway(std::shared_ptr<ChatBackend> chat, std::shared_ptr<EmbeddingBackend> embedder,
                       std::shared_ptr<Transcript> transcript, RetryPolicy retry)
    : chat_(std::move(chat)), embedder_(std::move(embedder)), transcript_(std::move(transcript)), retry_(retry) {
    if (!transcript_) transcript_ = std::make_shared<Transcript>();
    if (retry_.attempts < 1) retry_.attempts = 1;
}

namespace {

template <class F>
auto with_retries(const RetryPolicy& policy, F&& attempt) {
    auto backoff = policy.initial_backoff;
    for (int i = 1;; ++i) {
        try {
            return attempt(i);
        } catch (const Error& e) {
            if (e.code() != Errc::backend_unavailable || i >= policy.attempts) throw;
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

} // namespace

std::string LlmGateway::chat(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg) {
    if (messages.empty()) throw Error(Errc::precondition, "chat: messages must be non-empty");
    for (const auto& m : messages) {
        if (m.content.empty()) throw Error(Errc::precondition, "chat: message content must be non-empty");
    }
    if (cfg.temperature < 0) throw Error(Errc::precondition, "chat: temperature must be >= 0");
    if (cfg.max_tokens <= 0) throw Error(Errc::precondition, "chat: max_tokens must be positive");
    if (!chat_) throw Error(Errc::backend_unavailable, "no chat backend configured");

    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    return with_retries(retry_, [&](int attempt) {
        json entry = {{"kind", "chat"}, {"backend", chat_->name()}, {"attempt", attempt}, {"messages", msgs},
                      {"temperature", cfg.temperature}};
        try {
            auto reply = chat_->complete(messages, cfg);
            entry["response"] = reply;
            transcript_->record(std::move(entry));
            return reply;
        } catch (const Error& e) {
            entry["error"] = {{"code", errc_name(e.code())}, {"message", e.what()}};
            transcript_->record(std::move(entry));
            throw;
        }
    });
}

std::string LlmGateway::ask(const std::string& prompt, const GenerationConfig& cfg) {
    return chat({ChatMessage{Role::user, prompt}}, cfg);
}

std::vector<EmbeddingVector> LlmGateway::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error(Errc::precondition, "embed: texts must be non-empty");
    if (!embedder_) throw Error(Errc::backend_unavailable, "no embedding backend configured");
    return with_retries(retry_, [&](int attempt) {
        json entry = {{"kind", "embed"}, {"backend", embedder_->name()}, {"attempt", attempt}, {"texts", texts}};
        try {
            auto vectors = embedder_->embed(texts);
            if (vectors.size() != texts.size()) {
                throw Error(Errc::backend_unavailable, "embed: backend returned " + std::to_string(vectors.size()) +
                                                           " vectors for " + std::to_string(texts.size()) + " texts");
            }
            entry["dimension"] = embedder_->dimension();
            transcript_->record(std::move(entry));
            return vectors;
        } catch (const Error& e) {
            entry["error"] = {{"code", errc_name(e.code())}, {"message", e.what()}};
            transcript_->record(std::move(entry));
            throw;
        }
    });
}

std::size_t LlmGateway::embedding_dimension() const {
    if (!embedder_) throw Error(Errc::backend_unavailable, "no embedding backend configured");
    return embedder_->dimension();
}

std::shared_ptr<LlmGateway> LlmGateway::mock(MockScript script, std::size_t dimension,
                                             std::shared_ptr<Transcript> transcript) {
    return std::make_shared<LlmGateway>(std::make_shared<MockChatBackend>(std::move(script)),
                                        std::make_shared<MockEmbeddingBackend>(dimension), std::move(transcript));
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) throw Error(Errc::precondition, "cosine: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace kdr
