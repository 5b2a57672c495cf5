// SPDX-License-Identifier: Apache-2.0
#include "kdr/web_search.hpp"

#include <algorithm>
#include <filesystem>

#include <json.hpp>

#include "kdr/error.hpp"
#include "kdr/http.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kdr {

namespace {

SearchHit hit_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw Error(Errc::schema_violation, where + ": record must be an object");
    SearchHit h;
    try {
        h.title = j.at("title").get<std::string>();
        h.url = j.value("url", std::string{});
        h.body = j.at("body").get<std::string>();
        h.score = j.value("score", 0.0);
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, where + ": " + e.what());
    }
    return h;
}

} // namespace

FixtureSearchBackend::FixtureSearchBackend(const std::string& directory) {
    if (!fs::is_directory(directory)) throw Error(Errc::io_failure, "search corpus is not a directory: " + directory);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        json doc;
        try {
            doc = json::parse(text::read_file(f.string()));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, f.string() + ": " + e.what());
        }
        if (doc.is_array()) {
            for (const auto& item : doc) docs_.push_back(hit_from_json(item, f.string()));
        } else {
            docs_.push_back(hit_from_json(doc, f.string()));
        }
    }
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        index_.put(std::to_string(i), docs_[i].title + " " + docs_[i].body);
    }
}

std::vector<SearchHit> FixtureSearchBackend::search(const std::string& query, std::size_t limit) {
    if (docs_.empty()) throw Error(Errc::empty_corpus, "search corpus holds no documents");
    std::vector<SearchHit> out;
    for (const auto& s : index_.search(query, limit)) {
        SearchHit h = docs_[std::stoul(s.id)];
        h.score = s.score;
        out.push_back(std::move(h));
    }
    return out;
}

HttpSearchBackend::HttpSearchBackend(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_(timeout) {}

std::vector<SearchHit> HttpSearchBackend::search(const std::string& query, std::size_t limit) {
    http::Headers headers;
    if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
    http::Response res;
    try {
        res = http::post_json(base_url_, "/search", json{{"query", query}, {"limit", limit}}.dump(), headers, timeout_);
    } catch (const Error& e) {
        throw Error(Errc::search_backend_unavailable, e.what());
    }
    if (res.status < 200 || res.status >= 300) {
        throw Error(Errc::search_backend_unavailable, "search: HTTP " + std::to_string(res.status));
    }
    std::vector<SearchHit> out;
    try {
        for (const auto& r : json::parse(res.body).at("results")) out.push_back(hit_from_json(r, "search result"));
    } catch (const json::exception& e) {
        throw Error(Errc::search_backend_unavailable, std::string("search: malformed response: ") + e.what());
    } catch (const Error& e) {
        throw Error(Errc::search_backend_unavailable, e.what());
    }
    if (out.size() > limit) out.resize(limit);
    return out;
}

} // namespace kdr
