// SPDX-License-Identifier: Apache-2.0
#include "kdr/text_util.hpp"

#include "kdr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace kdr {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::duplicate_name: return "DuplicateName";
    case Errc::unknown_parent: return "UnknownParent";
    case Errc::kind_mismatch: return "KindMismatch";
    case Errc::cycle_detected: return "CycleDetected";
    case Errc::unknown_concept: return "UnknownConcept";
    case Errc::empty_import: return "EmptyImport";
    case Errc::invalid_identifier: return "InvalidIdentifier";
    case Errc::schema_violation: return "SchemaViolation";
    case Errc::precondition: return "PreconditionViolated";
    case Errc::backend_unavailable: return "BackendUnavailable";
    case Errc::context_too_long: return "ContextTooLong";
    case Errc::unparseable_verdict: return "UnparseableVerdict";
    case Errc::no_imports_found: return "NoImportsFound";
    case Errc::parse_failure: return "ParseFailure";
    case Errc::empty_output: return "EmptyOutput";
    case Errc::unknown_gold_type: return "UnknownGoldType";
    case Errc::type_mismatch: return "TypeMismatch";
    case Errc::key_mismatch: return "KeyMismatch";
    case Errc::unknown_id: return "UnknownId";
    case Errc::unrenderable_value: return "UnrenderableValue";
    case Errc::io_failure: return "IoFailure";
    case Errc::corrupt_record: return "CorruptRecord";
    case Errc::unbalanced_tags: return "UnbalancedTags";
    case Errc::empty_query: return "EmptyQuery";
    case Errc::no_concept_found: return "NoConceptFound";
    case Errc::rejected_code: return "RejectedCode";
    case Errc::no_topic_entity: return "NoTopicEntity";
    case Errc::no_instances_found: return "NoInstancesFound";
    case Errc::sandbox_unavailable: return "SandboxUnavailable";
    case Errc::search_backend_unavailable: return "SearchBackendUnavailable";
    case Errc::empty_corpus: return "EmptyCorpus";
    case Errc::unparseable_proposal: return "UnparseableProposal";
    case Errc::not_approved: return "NotApproved";
    case Errc::dangling_artifact: return "DanglingArtifact";
    case Errc::empty_plan: return "EmptyPlan";
    case Errc::gold_parent_missing: return "GoldParentMissing";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::subgraph_load_failure: return "SubgraphLoadFailure";
    case Errc::unparseable_score: return "UnparseableScore";
    }
    return "Error";
}

} // namespace kdr

namespace kdr::text {
namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_word_byte(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

} // namespace

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (is_upper(c)) c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

std::string normalize_name(std::string_view s) {
    std::string out = collapse_whitespace(to_lower(s));
    auto punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; };
    std::size_t b = 0;
    std::size_t e = out.size();
    while (b < e && punct(static_cast<unsigned char>(out[b]))) ++b;
    while (e > b && punct(static_cast<unsigned char>(out[e - 1]))) --e;
    return trim(std::string_view(out).substr(b, e - b));
}

std::string normalize_answer(std::string_view s) {
    return collapse_whitespace(to_lower(s));
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) tokens.push_back(to_lower(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (!is_word_byte(static_cast<unsigned char>(c))) {
            flush();
            continue;
        }
        if (!cur.empty() && is_upper(c)) {
            const char prev = cur.back();
            const bool next_lower = i + 1 < s.size() && is_lower(s[i + 1]);
            if (is_lower(prev) || is_digit(prev) || (is_upper(prev) && next_lower)) flush();
        }
        cur.push_back(c);
    }
    flush();
    return tokens;
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < s.size()) lines.emplace_back(s.substr(start));
            break;
        }
        std::string_view line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(line);
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    return to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

bool contains_word(std::string_view haystack, std::string_view word) {
    if (word.empty()) return false;
    auto ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    std::size_t pos = 0;
    while ((pos = haystack.find(word, pos)) != std::string_view::npos) {
        const bool left = pos == 0 || !ident(haystack[pos - 1]);
        const auto end = pos + word.size();
        const bool right = end >= haystack.size() || !ident(haystack[end]);
        if (left && right) return true;
        pos = end;
    }
    return false;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

bool is_concept_identifier(std::string_view s) {
    if (s.empty() || !is_upper(s[0])) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return is_upper(c) || is_lower(c) || is_digit(c); });
}

bool is_attribute_identifier(std::string_view s) {
    if (s.empty() || !is_lower(s[0])) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return is_lower(c) || is_digit(c) || c == '_'; });
}

std::string to_concept_identifier(std::string_view label) {
    std::string out;
    bool boundary = true;
    for (char c : label) {
        if (!(is_upper(c) || is_lower(c) || is_digit(c))) {
            boundary = true;
            continue;
        }
        if (boundary && is_lower(c)) c = static_cast<char>(c - 'a' + 'A');
        boundary = false;
        out.push_back(c);
    }
    if (out.empty() || !is_upper(out[0])) out.insert(out.begin(), 'C');
    return out;
}

std::string to_attribute_identifier(std::string_view label) {
    std::string out;
    for (char c : label) {
        if (is_upper(c)) {
            out.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (is_lower(c) || is_digit(c)) {
            out.push_back(c);
        } else if (!out.empty() && out.back() != '_') {
            out.push_back('_');
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    if (out.empty() || !is_lower(out[0])) out.insert(0, "a_");
    return out;
}

std::string extract_code_block(std::string_view response) {
    auto open = response.find("```");
    if (open != std::string_view::npos) {
        auto body = response.find('\n', open);
        if (body != std::string_view::npos) {
            auto close = response.find("```", body + 1);
            if (close != std::string_view::npos) {
                return std::string(response.substr(body + 1, close - body - 1));
            }
        }
    }
    return std::string(response);
}

std::string quote(std::string_view s) {
    std::string out;
    out.reserve(s.size() + 2);
    out.push_back('"');
    for (unsigned char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '"': out += "\\\""; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
            if (c < 0x20 || c == 0x7f) {
                static constexpr char digits[] = "0123456789abcdef";
                out += "\\x";
                out.push_back(digits[c >> 4]);
                out.push_back(digits[c & 0xf]);
            } else {
                out.push_back(static_cast<char>(c));
            }
        }
    }
    out.push_back('"');
    return out;
}

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(Errc::io_failure, "short write to " + path);
}

} // namespace kdr::text
