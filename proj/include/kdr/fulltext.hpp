// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kdr {

struct ScoredId {
    std::string id;
    double score = 0;

    friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

/// In-memory inverted index. score(q, d) = sum over distinct query tokens t
/// of tf(t, d) * ln(1 + N / df(t)); only positive scores are returned,
/// ordered by descending score then ascending id.
class InvertedIndex {
public:
    /// Adds or replaces the document `id`.
    void put(const std::string& id, std::string_view text);
    void remove(const std::string& id);
    void clear();

    std::vector<ScoredId> search(std::string_view query, std::size_t limit) const;

    /// Distinct tokens shared between the query and the document.
    std::size_t overlap(const std::string& id, std::string_view query) const;

    std::size_t size() const { return docs_.size(); }
    bool contains(const std::string& id) const { return docs_.count(id) != 0; }

private:
    // doc id -> token -> term frequency
    std::map<std::string, std::unordered_map<std::string, std::size_t>> docs_;
    // token -> doc ids containing it
    std::unordered_map<std::string, std::map<std::string, std::size_t>> postings_;
};

} // namespace kdr
