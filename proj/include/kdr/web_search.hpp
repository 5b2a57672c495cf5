// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "kdr/fulltext.hpp"

namespace kdr {

struct SearchHit {
    std::string title;
    std::string url;
    std::string body;
    double score = 0;
};

class SearchBackend {
public:
    virtual ~SearchBackend() = default;
    virtual std::string name() const = 0;
    /// Throws SearchBackendUnavailable or EmptyCorpus.
    virtual std::vector<SearchHit> search(const std::string& query, std::size_t limit) = 0;
};

/// Offline corpus: every `*.json` file in a directory holds one
/// `{title, url, body}` record or a list of them. Ranked with the same
/// tf-idf scoring as the knowledge store's full-text index.
class FixtureSearchBackend final : public SearchBackend {
public:
    explicit FixtureSearchBackend(const std::string& directory);

    std::string name() const override { return "fixture"; }
    std::vector<SearchHit> search(const std::string& query, std::size_t limit) override;
    std::size_t size() const { return docs_.size(); }

private:
    std::vector<SearchHit> docs_;
    InvertedIndex index_;
};

/// POST {base}/search {query, limit} -> {results: [{title, url, body, score?}]}.
class HttpSearchBackend final : public SearchBackend {
public:
    explicit HttpSearchBackend(std::string base_url, std::string api_key = {},
                               std::chrono::seconds timeout = std::chrono::seconds(30));

    std::string name() const override { return "http"; }
    std::vector<SearchHit> search(const std::string& query, std::size_t limit) override;

private:
    std::string base_url_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

} // namespace kdr
