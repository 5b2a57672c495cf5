// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kdr {

enum class Role { system, user, assistant };

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

std::string_view role_name(Role r) noexcept;

struct GenerationConfig {
    double temperature = 0.0;
    int max_tokens = 2048;
    std::vector<std::string> stop_sequences;
};

using EmbeddingVector = std::vector<double>;

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string name() const = 0;
    /// Throws Error(backend_unavailable) on transport failures and
    /// Error(context_too_long) when the backend rejects the prompt size.
    virtual std::string complete(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg) = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

// ---------------------------------------------------------------------------
// Scripted mock

struct MockRule {
    std::vector<std::string> contains; ///< every substring must occur in the prompt
    std::optional<std::string> regex;  ///< optional ECMAScript pattern searched in the prompt
    std::vector<std::string> responses;
};

struct MockScript {
    std::vector<MockRule> rules;
    std::string default_response;

    static MockScript from_json(const nlohmann::json& j);
    static MockScript load(const std::string& path);
};

/// First matching rule answers; each rule pops its queue and keeps repeating
/// its last response once exhausted.
class MockChatBackend final : public ChatBackend {
public:
    explicit MockChatBackend(MockScript script);

    std::string name() const override { return "mock"; }
    std::string complete(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg) override;

    /// Prompt text the matchers see: message contents joined by blank lines.
    static std::string flatten(const std::vector<ChatMessage>& messages);

private:
    MockScript script_;
    std::vector<std::size_t> cursors_;
    std::mutex mutex_;
};

/// Deterministic unit vectors seeded by a hash of the text.
class MockEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit MockEmbeddingBackend(std::size_t dimension = 64) : dimension_(dimension) {}

    std::string name() const override { return "mock-embed"; }
    std::size_t dimension() const override { return dimension_; }
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

private:
    std::size_t dimension_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backends

struct HttpEndpoint {
    std::string base_url; ///< e.g. http://localhost:8000/v1
    std::string api_key;
    std::string model;
    std::chrono::seconds timeout{120};
};

/// POST {base_url}/chat/completions with {model, messages, temperature, max_tokens, stop};
/// reads choices[0].message.content.
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

    std::string name() const override { return "http:" + endpoint_.model; }
    std::string complete(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg) override;

    static nlohmann::json request_body(const std::string& model, const std::vector<ChatMessage>& messages,
                                       const GenerationConfig& cfg);

private:
    HttpEndpoint endpoint_;
};

/// POST {base_url}/embeddings with {model, input}; reads data[i].embedding.
class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(HttpEndpoint endpoint, std::size_t dimension)
        : endpoint_(std::move(endpoint)), dimension_(dimension) {}

    std::string name() const override { return "http-embed:" + endpoint_.model; }
    std::size_t dimension() const override { return dimension_; }
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

private:
    HttpEndpoint endpoint_;
    std::size_t dimension_;
};

// ---------------------------------------------------------------------------
// Transcript + gateway

/// JSON-lines log of every exchange, one line per attempt. Appends are
/// serialized; when a path is set each entry is flushed to disk immediately.
class Transcript {
public:
    explicit Transcript(std::string path = {});

    void record(nlohmann::json entry);
    std::vector<nlohmann::json> entries() const;
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<nlohmann::json> entries_;
    std::size_t seq_ = 0;
    mutable std::mutex mutex_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
};

/// Uniform access to the chat and embedding backends, with retries and the
/// always-on transcript.
class LlmGateway {
public:
    LlmGateway(std::shared_ptr<ChatBackend> chat, std::shared_ptr<EmbeddingBackend> embedder,
               std::shared_ptr<Transcript> transcript = nullptr, RetryPolicy retry = {});

    std::string chat(const std::vector<ChatMessage>& messages, const GenerationConfig& cfg = {});
    /// Single user-turn convenience.
    std::string ask(const std::string& prompt, const GenerationConfig& cfg = {});
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

    std::size_t embedding_dimension() const;
    Transcript& transcript() { return *transcript_; }

    /// Mock chat + mock embeddings, the configuration every offline test uses.
    static std::shared_ptr<LlmGateway> mock(MockScript script, std::size_t dimension = 64,
                                            std::shared_ptr<Transcript> transcript = nullptr);

private:
    std::shared_ptr<ChatBackend> chat_;
    std::shared_ptr<EmbeddingBackend> embedder_;
    std::shared_ptr<Transcript> transcript_;
    RetryPolicy retry_;
};

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

} // namespace kdr
