// SPDX-License-Identifier: Apache-2.0
#include "kdr/fulltext.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kdr/error.hpp"
#include "kdr/text_util.hpp"

namespace kdr {

void InvertedIndex::put(const std::string& id, std::string_view text) {
    remove(id);
    auto& tf = docs_[id];
    for (auto& tok : text::tokenize(text)) ++tf[tok];
    for (const auto& [tok, n] : tf) postings_[tok][id] = n;
}

void InvertedIndex::remove(const std::string& id) {
    auto it = docs_.find(id);
    if (it == docs_.end()) return;
    for (const auto& [tok, n] : it->second) {
        auto p = postings_.find(tok);
        if (p == postings_.end()) continue;
        p->second.erase(id);
        if (p->second.empty()) postings_.erase(p);
    }
    docs_.erase(it);
}

void InvertedIndex::clear() {
    docs_.clear();
    postings_.clear();
}

std::vector<ScoredId> InvertedIndex::search(std::string_view query, std::size_t limit) const {
    if (limit == 0) throw Error(Errc::precondition, "search limit must be >= 1");
    const auto toks = text::tokenize(query);
    const std::set<std::string> distinct(toks.begin(), toks.end());
    const double n = static_cast<double>(docs_.size());
    std::map<std::string, double> scores;
    for (const auto& tok : distinct) {
        auto p = postings_.find(tok);
        if (p == postings_.end()) continue;
        const double idf = std::log(1.0 + n / static_cast<double>(p->second.size()));
        for (const auto& [id, tf] : p->second) scores[id] += static_cast<double>(tf) * idf;
    }
    std::vector<ScoredId> out;
    for (auto& [id, s] : scores) {
        if (s > 0) out.push_back({id, s});
    }
    std::sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    if (out.size() > limit) out.resize(limit);
    return out;
}

std::size_t InvertedIndex::overlap(const std::string& id, std::string_view query) const {
    auto it = docs_.find(id);
    if (it == docs_.end()) return 0;
    const auto toks = text::tokenize(query);
    const std::set<std::string> distinct(toks.begin(), toks.end());
    std::size_t n = 0;
    for (const auto& t : distinct) n += it->second.count(t);
    return n;
}

} // namespace kdr
