// SPDX-License-Identifier: Apache-2.0
#include "kdr/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "kdr/templates.hpp"
#include "kdr/text_util.hpp"

namespace kdr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Prompts

void validate_request(const ExtractionRequest& req) {
    if (req.ns.empty()) throw Error(Errc::precondition, "extraction request needs a namespace");
    if (req.mode == ExtractionMode::closed && req.allowed_types.empty()) {
        throw Error(Errc::precondition, "closed-domain extraction needs allowed types");
    }
    if (req.mode == ExtractionMode::open && !req.allowed_types.empty()) {
        throw Error(Errc::precondition, "open-domain extraction takes no allowed types");
    }
}

namespace {

std::string bare(std::string_view key) {
    auto dot = key.rfind('.');
    return std::string(dot == std::string_view::npos ? key : key.substr(dot + 1));
}

std::string import_clause(const std::string& ns, const std::vector<std::string>& names) {
    std::vector<std::string> shown;
    shown.reserve(names.size());
    for (const auto& n : names) shown.push_back(bare(n));
    return "From " + ns + " Import " + text::join(shown, ", ");
}

std::string with_task(std::string_view tmpl, const std::string& ns) { return templates::substitute(tmpl, "task", ns); }

} // namespace

std::string render_schema_recall_prompt(const std::string& ns, const std::string& type_name) {
    return templates::substitute(with_task(templates::kSchemaRecall, ns), "type", type_name);
}

std::string render_importing_prompt(const ExtractionRequest& req) {
    validate_request(req);
    const std::string sentence = std::string(templates::kSentencePrefix) + req.text;
    if (req.mode == ExtractionMode::open) return with_task(templates::kOpenImporting, req.ns) + "\n\n" + sentence;
    return import_clause(req.ns, req.allowed_types) + "\n\n" + with_task(templates::kClosedImporting, req.ns) +
           "\n\n" + sentence;
}

std::string render_instantiation_prompt(const std::string& ns, const std::vector<std::string>& imported,
                                        const std::string& text) {
    if (imported.empty()) throw Error(Errc::empty_import, "instantiation needs at least one imported type");
    return import_clause(ns, imported) + "\n\n" + with_task(templates::kInstantiation, ns) + "\n\n" +
           std::string(templates::kSentencePrefix) + text;
}

namespace {

/// Case-insensitive resolution inside the namespace (and its dependencies)
/// after an exact attempt.
std::optional<std::string> resolve_loose(const OntologyGraph& graph, const std::string& name, const std::string& ns) {
    if (auto r = graph.resolve(name, ns); r && !is_root_name(*r)) return r;
    const auto lower = text::to_lower(name);
    std::vector<std::string> scopes{ns};
    if (auto it = graph.dependencies().find(ns); it != graph.dependencies().end()) {
        scopes.insert(scopes.end(), it->second.begin(), it->second.end());
    }
    for (const auto& scope : scopes) {
        for (const auto& key : graph.namespace_members(scope)) {
            if (text::to_lower(bare(key)) == lower) return key;
        }
    }
    return std::nullopt;
}

} // namespace

std::vector<std::string> parse_import_lines(std::string_view response, const OntologyGraph& graph,
                                            const std::string& ns, Diagnostics* dropped) {
    std::vector<std::string> out;
    for (auto line : text::split_lines(text::extract_code_block(response))) {
        line = text::trim(line);
        while (!line.empty() && (line.front() == '-' || line.front() == '*' || line.front() == '`')) {
            line = text::trim(line.substr(1));
        }
        std::string lower = text::to_lower(line);
        std::size_t start;
        if (lower.rfind("import ", 0) == 0) {
            start = 7;
        } else if (lower.rfind("from ", 0) == 0) {
            auto pos = lower.find(" import ");
            if (pos == std::string::npos) continue;
            start = pos + 8;
        } else {
            continue;
        }
        for (auto name : text::split(line.substr(start), ',')) {
            name = text::trim(name);
            while (!name.empty() && (name.back() == '.' || name.back() == '`' || name.back() == ';')) name.pop_back();
            if (name.empty()) continue;
            auto key = resolve_loose(graph, name, ns);
            if (!key) {
                if (dropped) dropped->push_back({Errc::unknown_concept, "dropped unknown import '" + name + "'"});
                continue;
            }
            if (std::find(out.begin(), out.end(), *key) == out.end()) out.push_back(*key);
        }
    }
    if (out.empty()) throw Error(Errc::no_imports_found, "response contains no valid Import lines");
    return out;
}

// ---------------------------------------------------------------------------
// Lexer

std::string_view issue_kind_name(IssueKind k) noexcept {
    switch (k) {
    case IssueKind::unknown_class: return "UnknownClass";
    case IssueKind::unknown_keyword: return "UnknownKeyword";
    case IssueKind::malformed: return "Malformed";
    case IssueKind::nesting_too_deep: return "NestingTooDeep";
    case IssueKind::missing_name: return "MissingName";
    case IssueKind::type_mismatch: return "TypeMismatch";
    }
    return "Malformed";
}

namespace {

enum class Tok { ident, string, number, lparen, rparen, lbracket, rbracket, comma, equals, newline, end, error };

struct Token {
    Tok kind;
    std::string text; ///< identifier, decoded string, number spelling or error message
    double number = 0;
    std::size_t begin = 0, end = 0;
};

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> toks;
    int depth = 0;
    std::size_t i = 0;
    auto hex_value = [&](std::size_t at, int digits) -> std::optional<std::uint32_t> {
        if (at + static_cast<std::size_t>(digits) > src.size()) return std::nullopt;
        std::uint32_t v = 0;
        for (int d = 0; d < digits; ++d) {
            char c = src[at + static_cast<std::size_t>(d)];
            v <<= 4;
            if (c >= '0' && c <= '9') v |= static_cast<std::uint32_t>(c - '0');
            else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint32_t>(c - 'a' + 10);
            else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint32_t>(c - 'A' + 10);
            else return std::nullopt;
        }
        return v;
    };
    while (i < src.size()) {
        const char c = src[i];
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') ++i;
            continue;
        }
        if (c == '\n') {
            if (depth == 0 && (toks.empty() || toks.back().kind != Tok::newline)) toks.push_back({Tok::newline, "", 0, i, i + 1});
            ++i;
            continue;
        }
        if (c == '\\' && i + 1 < src.size() && src[i + 1] == '\n') {
            i += 2;
            continue;
        }
        const std::size_t start = i;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_' || src[i] == '.')) ++i;
            toks.push_back({Tok::ident, std::string(src.substr(start, i - start)), 0, start, i});
            continue;
        }
        const bool signed_number = (c == '-' || c == '+') && i + 1 < src.size() &&
                                   (std::isdigit(static_cast<unsigned char>(src[i + 1])) || src[i + 1] == '.');
        if (std::isdigit(static_cast<unsigned char>(c)) || signed_number ||
            (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            if (signed_number) ++i;
            while (i < src.size() && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
            if (i < src.size() && src[i] == '.') {
                ++i;
                while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
            }
            if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
                std::size_t j = i + 1;
                if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
                if (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
                    i = j;
                    while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
                }
            }
            std::string spelling(src.substr(start, i - start));
            spelling.erase(std::remove(spelling.begin(), spelling.end(), '_'), spelling.end());
            if (!spelling.empty() && spelling.front() == '+') spelling.erase(0, 1);
            char* endp = nullptr;
            double v = std::strtod(spelling.c_str(), &endp);
            if (endp != spelling.c_str() + spelling.size()) {
                toks.push_back({Tok::error, "malformed number '" + spelling + "'", 0, start, i});
            } else {
                toks.push_back({Tok::number, spelling, v, start, i});
            }
            continue;
        }
        if (c == '"' || c == '\'') {
            const char quote = c;
            ++i;
            std::string value;
            bool closed = false;
            std::string error;
            while (i < src.size()) {
                char ch = src[i];
                if (ch == quote) {
                    closed = true;
                    ++i;
                    break;
                }
                if (ch == '\n') break;
                if (ch != '\\') {
                    value += ch;
                    ++i;
                    continue;
                }
                if (i + 1 >= src.size()) break;
                char e = src[i + 1];
                i += 2;
                switch (e) {
                case 'n': value += '\n'; break;
                case 't': value += '\t'; break;
                case 'r': value += '\r'; break;
                case '0': value += '\0'; break;
                case '\\': value += '\\'; break;
                case '"': value += '"'; break;
                case '\'': value += '\''; break;
                case '\n': break;
                case 'x':
                    if (auto v = hex_value(i, 2)) {
                        append_utf8(value, *v);
                        i += 2;
                    } else {
                        error = "bad \\x escape";
                    }
                    break;
                case 'u':
                    if (auto v = hex_value(i, 4)) {
                        append_utf8(value, *v);
                        i += 4;
                    } else {
                        error = "bad \\u escape";
                    }
                    break;
                default:
                    value += '\\';
                    value += e;
                }
            }
            if (!closed) {
                toks.push_back({Tok::error, "unterminated string", 0, start, i});
                // Skip the rest of the line so prose apostrophes do not cascade.
                while (i < src.size() && src[i] != '\n') ++i;
                continue;
            }
            if (!error.empty()) {
                toks.push_back({Tok::error, error, 0, start, i});
                continue;
            }
            // Adjacent literals concatenate, as in Python.
            if (!toks.empty() && toks.back().kind == Tok::string && toks.back().end <= start) {
                bool only_space = true;
                for (std::size_t k = toks.back().end; k < start; ++k) {
                    if (src[k] != ' ' && src[k] != '\t') only_space = false;
                }
                if (only_space) {
                    toks.back().text += value;
                    toks.back().end = i;
                    continue;
                }
            }
            toks.push_back({Tok::string, std::move(value), 0, start, i});
            continue;
        }
        Tok kind = Tok::error;
        switch (c) {
        case '(': kind = Tok::lparen; ++depth; break;
        case ')': kind = Tok::rparen; depth = std::max(0, depth - 1); break;
        case '[': kind = Tok::lbracket; ++depth; break;
        case ']': kind = Tok::rbracket; depth = std::max(0, depth - 1); break;
        case ',': kind = Tok::comma; break;
        case '=': kind = Tok::equals; break;
        default: break;
        }
        ++i;
        toks.push_back({kind, kind == Tok::error ? std::string("unexpected character '") + c + "'" : std::string(1, c),
                        0, start, i});
    }
    toks.push_back({Tok::end, "", 0, src.size(), src.size()});
    return toks;
}

// ---------------------------------------------------------------------------
// Syntax tree

struct Arg;

struct Expr {
    enum class Kind { string, number, ident, none, boolean, list, call } kind = Kind::none;
    std::string text; ///< string value, identifier, callee or number spelling
    double number = 0;
    std::vector<Expr> items;
    std::vector<Arg> args;
    std::size_t begin = 0, end = 0;
};

struct Arg {
    std::string key; ///< empty for positional
    Expr value;
    std::size_t begin = 0;
};

struct SyntaxError {
    std::string message;
    std::size_t position;
};

class Parser {
public:
    explicit Parser(const std::vector<Token>& toks) : toks_(toks) {}

    const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
    const Token& next() {
        const Token& t = toks_[pos_];
        if (pos_ + 1 < toks_.size()) ++pos_;
        return t;
    }
    bool at(Tok k) const { return peek().kind == k; }

    void expect(Tok k, const char* what) {
        if (!at(k)) fail(std::string("expected ") + what);
        next();
    }

    [[noreturn]] void fail(const std::string& msg) const {
        const auto& t = peek();
        std::string detail = msg;
        if (t.kind == Tok::error) detail += " (" + t.text + ")";
        throw SyntaxError{detail, t.begin};
    }

    Expr expr() {
        const Token& t = peek();
        switch (t.kind) {
        case Tok::string: {
            next();
            Expr e;
            e.kind = Expr::Kind::string;
            e.text = t.text;
            e.begin = t.begin;
            e.end = t.end;
            return e;
        }
        case Tok::number: {
            next();
            Expr e;
            e.kind = Expr::Kind::number;
            e.text = t.text;
            e.number = t.number;
            e.begin = t.begin;
            e.end = t.end;
            return e;
        }
        case Tok::lbracket: return list(false, nullptr);
        case Tok::ident: {
            if (peek(1).kind == Tok::lparen) return call();
            next();
            Expr e;
            e.begin = t.begin;
            e.end = t.end;
            if (t.text == "None") {
                e.kind = Expr::Kind::none;
            } else if (t.text == "True" || t.text == "False") {
                e.kind = Expr::Kind::boolean;
                e.text = t.text;
            } else {
                e.kind = Expr::Kind::ident;
                e.text = t.text;
            }
            return e;
        }
        default: fail("expected a value");
        }
    }

    Expr call() {
        const Token& name = next();
        Expr e;
        e.kind = Expr::Kind::call;
        e.text = name.text;
        e.begin = name.begin;
        expect(Tok::lparen, "'('");
        bool keyword_seen = false;
        while (!at(Tok::rparen)) {
            Arg a;
            a.begin = peek().begin;
            if (at(Tok::ident) && peek(1).kind == Tok::equals) {
                a.key = next().text;
                next();
                keyword_seen = true;
            } else if (keyword_seen) {
                fail("positional argument after keyword argument");
            }
            a.value = expr();
            e.args.push_back(std::move(a));
            if (at(Tok::comma)) {
                next();
                continue;
            }
            if (!at(Tok::rparen)) fail("expected ',' or ')' in call to " + e.text);
        }
        e.end = next().end;
        return e;
    }

    /// `[a, b, ...]`. With `recover` set, a malformed item is skipped up to the
    /// next ',' or ']' at the list's own depth and reported.
    Expr list(bool recover, std::vector<SyntaxError>* item_errors) {
        Expr e;
        e.kind = Expr::Kind::list;
        e.begin = next().begin;
        while (!at(Tok::rbracket)) {
            if (at(Tok::end)) fail("unterminated list");
            if (!recover) {
                e.items.push_back(expr());
            } else {
                const std::size_t mark = pos_;
                try {
                    e.items.push_back(expr());
                    if (!at(Tok::comma) && !at(Tok::rbracket)) fail("expected ',' or ']'");
                } catch (const SyntaxError& err) {
                    item_errors->push_back(err);
                    pos_ = mark;
                    int depth = 0;
                    while (!at(Tok::end)) {
                        Tok k = peek().kind;
                        if (depth == 0 && (k == Tok::comma || k == Tok::rbracket)) break;
                        if (k == Tok::lparen || k == Tok::lbracket) ++depth;
                        if (k == Tok::rparen || k == Tok::rbracket) --depth;
                        next();
                    }
                    if (at(Tok::end)) fail("unterminated list");
                }
            }
            if (at(Tok::comma)) {
                next();
                continue;
            }
            if (!at(Tok::rbracket)) fail("expected ',' or ']'");
        }
        e.end = next().end;
        return e;
    }

    void skip_line() {
        while (!at(Tok::newline) && !at(Tok::end)) next();
    }

private:
    const std::vector<Token>& toks_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Semantic conversion

struct SemanticIssue {
    IssueKind kind;
    std::string message;
    std::size_t position;
};

class Converter {
public:
    Converter(const OntologyGraph& graph, const std::string& ns) : graph_(graph), ns_(ns) {}

    /// Converts a top-level call; on success the call and its nested/stub
    /// objects are appended to `out` and the call's index is returned.
    std::size_t top_level(const Expr& call, std::vector<ParsedInstantiation>& out) {
        base_ = out.size();
        staged_.clear();
        auto idx = convert_call(call, 0);
        for (auto& p : staged_) out.push_back(std::move(p));
        staged_.clear();
        return idx;
    }

    void bind(const std::string& name, std::size_t index) { vars_[name] = index; }
    std::optional<std::size_t> lookup(const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<ParsedInstantiation>* committed = nullptr;

private:
    std::size_t convert_call(const Expr& call, int depth) {
        auto key = graph_.resolve(call.text, ns_);
        if (!key || is_root_name(*key)) {
            throw SemanticIssue{IssueKind::unknown_class, "unknown class '" + call.text + "'", call.begin};
        }
        const auto attrs = graph_.effective_attributes(*key);
        const std::string identity(identity_attribute(graph_.kind_of(*key)));
        ParsedInstantiation p;
        p.concept_name = *key;
        p.source_span = {call.begin, call.end};
        std::set<std::string> seen;
        std::optional<std::string> name;
        for (std::size_t i = 0; i < call.args.size(); ++i) {
            const auto& arg = call.args[i];
            std::string attr_name = arg.key;
            if (attr_name.empty()) {
                if (i >= attrs.size()) {
                    throw SemanticIssue{IssueKind::malformed, "too many positional arguments for " + call.text, arg.begin};
                }
                attr_name = attrs[i].name;
            }
            auto spec = std::find_if(attrs.begin(), attrs.end(), [&](const AttributeSpec& a) { return a.name == attr_name; });
            if (spec == attrs.end()) {
                throw SemanticIssue{IssueKind::unknown_keyword, call.text + " has no attribute '" + attr_name + "'", arg.begin};
            }
            if (!seen.insert(attr_name).second) {
                throw SemanticIssue{IssueKind::malformed, "duplicate argument '" + attr_name + "'", arg.begin};
            }
            if (arg.value.kind == Expr::Kind::none) continue;
            if (attr_name == identity) {
                name = identity_text(arg.value);
                continue;
            }
            auto values = convert_values(arg.value, *spec, depth);
            if (!values.empty()) p.args[attr_name] = std::move(values);
        }
        if (!name || text::trim(*name).empty()) {
            if (graph_.kind_of(*key) == ConceptKind::event) name = synthesized_name(p);
            if (!name || name->empty()) {
                throw SemanticIssue{IssueKind::missing_name, call.text + " lacks '" + identity + "'", call.begin};
            }
        }
        p.display_name = *name;
        staged_.push_back(std::move(p));
        return base_ + staged_.size() - 1;
    }

    std::string identity_text(const Expr& e) const {
        switch (e.kind) {
        case Expr::Kind::string: return e.text;
        case Expr::Kind::number: return text::format_number(e.number);
        default: throw SemanticIssue{IssueKind::type_mismatch, "identity value must be a string", e.begin};
        }
    }

    /// Event instances without a trigger are named after their arguments.
    std::string synthesized_name(const ParsedInstantiation& p) const {
        std::vector<std::string> parts;
        for (const auto& [attr, values] : p.args) {
            for (const auto& v : values) {
                if (v.kind == ValueKind::ref) parts.push_back(object_at(v.ref).display_name);
                else if (v.kind == ValueKind::number) parts.push_back(text::format_number(v.number));
                else parts.push_back(v.text);
            }
        }
        return text::join(parts, " | ");
    }

    const ParsedInstantiation& object_at(std::size_t index) const {
        if (index >= base_) return staged_[index - base_];
        return (*committed)[index];
    }

    std::vector<ParsedValue> convert_values(const Expr& e, const AttributeSpec& spec, int depth) {
        std::vector<ParsedValue> out;
        if (e.kind == Expr::Kind::list) {
            if (!spec.type.is_list && e.items.size() > 1) {
                throw SemanticIssue{IssueKind::type_mismatch, spec.name + " takes a single value", e.begin};
            }
            std::optional<Expr::Kind> first;
            for (const auto& item : e.items) {
                if (item.kind == Expr::Kind::none) continue;
                if (item.kind == Expr::Kind::list) {
                    throw SemanticIssue{IssueKind::malformed, "nested list in " + spec.name, item.begin};
                }
                // Literal lists must be homogeneous; calls, names and strings may mix in ref lists.
                const bool literal = item.kind == Expr::Kind::number || item.kind == Expr::Kind::boolean ||
                                     (item.kind == Expr::Kind::string && spec.type.scalar != ScalarType::ref);
                if (literal) {
                    if (first && *first != item.kind) {
                        throw SemanticIssue{IssueKind::malformed, "mixed literal types in " + spec.name, item.begin};
                    }
                    first = item.kind;
                }
                out.push_back(convert_scalar(item, spec, depth));
            }
        } else {
            out.push_back(convert_scalar(e, spec, depth));
        }
        // Duplicates collapse, keeping first occurrence.
        std::vector<ParsedValue> unique;
        for (auto& v : out) {
            if (std::find(unique.begin(), unique.end(), v) == unique.end()) unique.push_back(v);
        }
        return unique;
    }

    ParsedValue convert_scalar(const Expr& e, const AttributeSpec& spec, int depth) {
        ParsedValue v;
        switch (spec.type.scalar) {
        case ScalarType::text:
        case ScalarType::date:
            v.kind = spec.type.scalar == ScalarType::text ? ValueKind::text : ValueKind::date;
            if (e.kind == Expr::Kind::string || e.kind == Expr::Kind::boolean) v.text = e.text;
            else if (e.kind == Expr::Kind::number) v.text = e.text;
            else throw SemanticIssue{IssueKind::type_mismatch, spec.name + " expects a literal", e.begin};
            return v;
        case ScalarType::number:
            v.kind = ValueKind::number;
            if (e.kind == Expr::Kind::number) {
                v.number = e.number;
                return v;
            }
            if (e.kind == Expr::Kind::string) {
                auto s = text::trim(e.text);
                s.erase(std::remove(s.begin(), s.end(), ','), s.end());
                char* endp = nullptr;
                double d = std::strtod(s.c_str(), &endp);
                if (!s.empty() && endp == s.c_str() + s.size() && std::isfinite(d)) {
                    v.number = d;
                    return v;
                }
            }
            throw SemanticIssue{IssueKind::type_mismatch, spec.name + " expects a number", e.begin};
        case ScalarType::ref: break;
        }
        v.kind = ValueKind::ref;
        const auto target = graph_.resolve(spec.type.ref, ns_).value_or(spec.type.ref);
        if (e.kind == Expr::Kind::call) {
            if (depth >= 1) {
                throw SemanticIssue{IssueKind::nesting_too_deep, "constructor nested more than one level", e.begin};
            }
            v.ref = convert_call(e, depth + 1);
            check_target(object_at(v.ref).concept_name, target, spec, e.begin);
            return v;
        }
        if (e.kind == Expr::Kind::ident) {
            auto idx = lookup(e.text);
            if (!idx) throw SemanticIssue{IssueKind::malformed, "unbound name '" + e.text + "'", e.begin};
            check_target(object_at(*idx).concept_name, target, spec, e.begin);
            v.ref = *idx;
            return v;
        }
        if (e.kind == Expr::Kind::string) {
            if (text::trim(e.text).empty()) throw SemanticIssue{IssueKind::missing_name, "empty reference", e.begin};
            ParsedInstantiation stub;
            stub.concept_name = target;
            stub.display_name = e.text;
            stub.source_span = {e.begin, e.end};
            stub.stub = true;
            staged_.push_back(std::move(stub));
            v.ref = base_ + staged_.size() - 1;
            return v;
        }
        throw SemanticIssue{IssueKind::type_mismatch, spec.name + " expects a " + spec.type.ref, e.begin};
    }

    void check_target(const std::string& actual, const std::string& target, const AttributeSpec& spec,
                      std::size_t pos) const {
        if (actual == target || graph_.is_descendant(actual, target) ||
            (graph_.contains(target) && graph_.canonical(actual) == graph_.canonical(target))) {
            return;
        }
        throw SemanticIssue{IssueKind::type_mismatch, spec.name + " expects " + target + ", got " + actual, pos};
    }

    const OntologyGraph& graph_;
    const std::string& ns_;
    std::map<std::string, std::size_t> vars_;
    std::vector<ParsedInstantiation> staged_;
    std::size_t base_ = 0;
};

} // namespace

ParseResult parse_instantiation_code(std::string_view response, const OntologyGraph& graph, const std::string& ns,
                                     bool tolerant) {
    const std::string code = text::extract_code_block(response);
    const auto toks = lex(code);
    Parser parser(toks);
    Converter conv(graph, ns);
    ParseResult result;
    conv.committed = &result.objects;
    std::size_t statements = 0;

    auto report = [&](IssueKind kind, const std::string& msg, std::size_t pos) {
        if (!tolerant) throw Error(Errc::parse_failure, std::string(issue_kind_name(kind)) + ": " + msg, pos);
        result.issues.push_back({kind, msg, pos});
    };
    auto run_call = [&](const Expr& call) -> std::optional<std::size_t> {
        try {
            return conv.top_level(call, result.objects);
        } catch (const SemanticIssue& issue) {
            report(issue.kind, issue.message, issue.position);
            return std::nullopt;
        }
    };
    auto run_list = [&](const Expr& list) {
        for (const auto& item : list.items) {
            if (item.kind == Expr::Kind::call) {
                run_call(item);
            } else if (item.kind == Expr::Kind::ident) {
                if (!conv.lookup(item.text)) report(IssueKind::malformed, "unbound name '" + item.text + "'", item.begin);
            } else if (item.kind != Expr::Kind::none) {
                report(IssueKind::malformed, "list item is not an object", item.begin);
            }
        }
    };

    while (!parser.at(Tok::end)) {
        if (parser.at(Tok::newline)) {
            parser.next();
            continue;
        }
        try {
            std::vector<SyntaxError> item_errors;
            std::optional<std::string> target;
            const bool code_like = parser.at(Tok::lbracket) ||
                                   (parser.at(Tok::ident) && (parser.peek(1).kind == Tok::equals ||
                                                              parser.peek(1).kind == Tok::lparen));
            if (code_like) ++statements;
            if (parser.at(Tok::ident) && parser.peek(1).kind == Tok::equals) {
                target = parser.next().text;
                parser.next();
            }
            if (parser.at(Tok::lbracket)) {
                Expr list = parser.list(tolerant, &item_errors);
                if (!parser.at(Tok::newline) && !parser.at(Tok::end)) parser.fail("expected end of statement");
                for (const auto& err : item_errors) report(IssueKind::malformed, err.message, err.position);
                run_list(list);
            } else if (parser.at(Tok::ident) && parser.peek(1).kind == Tok::lparen) {
                Expr call = parser.call();
                if (!parser.at(Tok::newline) && !parser.at(Tok::end)) parser.fail("expected end of statement");
                if (auto idx = run_call(call); idx && target) conv.bind(*target, *idx);
            } else if (target && parser.at(Tok::ident)) {
                // Alias of an existing binding.
                const Token& src = parser.next();
                if (!parser.at(Tok::newline) && !parser.at(Tok::end)) parser.fail("expected end of statement");
                if (auto idx = conv.lookup(src.text)) conv.bind(*target, *idx);
                else report(IssueKind::malformed, "unbound name '" + src.text + "'", src.begin);
            } else if (target) {
                parser.fail("expected a constructor call or list");
            } else {
                // Prose around the code is ignored.
                parser.skip_line();
            }
        } catch (const SyntaxError& err) {
            report(IssueKind::malformed, err.message, err.position);
            parser.skip_line();
        }
    }
    if (statements == 0) throw Error(Errc::empty_output, "no instantiation statements found");
    return result;
}

std::vector<KnowledgeObject> to_knowledge_objects(const std::vector<ParsedInstantiation>& parsed,
                                                  const OntologyGraph& graph, const std::string& source,
                                                  Timestamp timestamp) {
    std::vector<std::string> ids;
    ids.reserve(parsed.size());
    for (const auto& p : parsed) ids.push_back(object_id(graph, p.concept_name, p.display_name));
    std::vector<KnowledgeObject> out;
    out.reserve(parsed.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        const auto& p = parsed[i];
        KnowledgeObject o;
        o.id = ids[i];
        o.concept_name = p.concept_name;
        o.display_name = p.display_name;
        o.provenance = {{source, timestamp}};
        o.updated_at = timestamp;
        for (const auto& [attr, values] : p.args) {
            auto& slot = o.slots[attr];
            for (const auto& v : values) {
                SlotValue sv;
                sv.kind = v.kind;
                sv.number = v.number;
                sv.text = v.kind == ValueKind::ref ? ids.at(v.ref) : v.text;
                slot.push_back(std::move(sv));
            }
        }
        out.push_back(std::move(o));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Two-step extraction

ExtractionResult extract(const ExtractionRequest& req, const OntologyGraph& graph, LlmGateway& llm) {
    validate_request(req);
    ExtractionResult result;
    std::set<std::string> allowed;
    if (req.mode == ExtractionMode::closed) {
        for (const auto& t : req.allowed_types) allowed.insert(graph.require(t, req.ns));
    }
    auto permitted = [&](const std::string& concept_name) {
        if (req.mode == ExtractionMode::open) return true;
        if (allowed.count(concept_name)) return true;
        return std::any_of(allowed.begin(), allowed.end(),
                           [&](const std::string& a) { return graph.canonical(a) == graph.canonical(concept_name); });
    };

    const auto import_response = llm.ask(render_importing_prompt(req));
    std::vector<std::string> imported;
    try {
        imported = parse_import_lines(import_response, graph, req.ns, &result.diagnostics);
    } catch (const Error& e) {
        if (e.code() != Errc::no_imports_found) throw;
        result.reason = e.what();
        return result;
    }
    for (const auto& name : imported) {
        if (permitted(name)) {
            result.imported.push_back(name);
        } else {
            result.diagnostics.push_back({Errc::unknown_concept, "import outside allowed types: " + name});
        }
    }
    if (result.imported.empty()) {
        result.reason = "no recalled type is among the allowed types";
        return result;
    }

    const auto code_response = llm.ask(render_instantiation_prompt(req.ns, result.imported, req.text));
    ParseResult parsed;
    try {
        parsed = parse_instantiation_code(code_response, graph, req.ns, true);
    } catch (const Error& e) {
        if (e.code() != Errc::empty_output) throw;
        result.reason = e.what();
        return result;
    }
    result.issues = parsed.issues;
    auto objects = to_knowledge_objects(parsed.objects, graph, req.source_id, req.timestamp);

    // Closed mode never yields objects outside the allowed types; refs to dropped objects go too.
    std::set<std::string> dropped;
    for (const auto& o : objects) {
        if (!permitted(o.concept_name)) dropped.insert(o.id);
    }
    for (auto& o : objects) {
        if (dropped.count(o.id)) {
            result.diagnostics.push_back({Errc::unknown_concept, "dropped " + o.concept_name + " '" + o.display_name +
                                                                     "' outside allowed types"});
            continue;
        }
        for (auto it = o.slots.begin(); it != o.slots.end();) {
            auto& vals = it->second;
            vals.erase(std::remove_if(vals.begin(), vals.end(),
                                      [&](const SlotValue& v) { return v.kind == ValueKind::ref && dropped.count(v.text); }),
                       vals.end());
            it = vals.empty() ? o.slots.erase(it) : std::next(it);
        }
        result.objects.push_back(std::move(o));
    }
    if (result.objects.empty() && !result.reason) result.reason = "no objects instantiated";
    return result;
}

// ---------------------------------------------------------------------------
// Corpora

IeExample ie_example_from_json(const json& j) {
    IeExample ex;
    try {
        ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        ex.text = j.at("text").get<std::string>();
        for (const auto& a : j.value("annotations", json::array())) {
            Annotation ann;
            ann.type = a.at("type").get<std::string>();
            ann.slots = a.value("slots", json::object());
            if (!ann.slots.is_object()) throw Error(Errc::schema_violation, "annotation slots must be an object");
            ex.annotations.push_back(std::move(ann));
        }
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, std::string("IE example: ") + e.what());
    }
    return ex;
}

std::vector<IeExample> load_ie_dataset(const std::string& path) {
    std::vector<IeExample> out;
    std::size_t lineno = 0;
    for (const auto& line : text::split_lines(text::read_file(path))) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(ie_example_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        } catch (const Error& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
    }
    return out;
}

std::vector<KnowledgeObject> annotation_to_objects(const Annotation& ann, const OntologyGraph& graph,
                                                   const std::string& ns, const std::string& source) {
    auto key = graph.resolve(ann.type, ns);
    if (!key || is_root_name(*key)) throw Error(Errc::unknown_gold_type, "unknown gold type '" + ann.type + "'");
    const auto attrs = graph.effective_attributes(*key);
    const std::string identity(identity_attribute(graph.kind_of(*key)));
    std::vector<KnowledgeObject> stubs;
    KnowledgeObject obj;
    obj.concept_name = *key;
    obj.provenance = {{source, 0}};

    auto scalar = [&](const json& v, const AttributeSpec& spec) -> SlotValue {
        switch (spec.type.scalar) {
        case ScalarType::number:
            if (v.is_number()) return SlotValue::of_number(v.get<double>());
            if (v.is_string()) {
                char* endp = nullptr;
                const auto s = v.get<std::string>();
                double d = std::strtod(s.c_str(), &endp);
                if (!s.empty() && endp == s.c_str() + s.size()) return SlotValue::of_number(d);
            }
            break;
        case ScalarType::text:
        case ScalarType::date: {
            std::string s;
            if (v.is_string()) s = v.get<std::string>();
            else if (v.is_number()) s = text::format_number(v.get<double>());
            else break;
            return spec.type.scalar == ScalarType::text ? SlotValue::of_text(s) : SlotValue::of_date(s);
        }
        case ScalarType::ref:
            if (v.is_string()) {
                KnowledgeObject stub;
                stub.concept_name = graph.resolve(spec.type.ref, ns).value_or(spec.type.ref);
                stub.display_name = v.get<std::string>();
                stub.id = object_id(graph, stub.concept_name, stub.display_name);
                stub.provenance = {{source, 0}};
                stubs.push_back(stub);
                return SlotValue::of_ref(stub.id);
            }
            break;
        }
        throw Error(Errc::type_mismatch, ann.type + "." + spec.name + ": unsupported gold value " + v.dump());
    };

    for (const auto& [attr, value] : ann.slots.items()) {
        if (attr == identity) {
            obj.display_name = value.is_string() ? value.get<std::string>() : value.dump();
            continue;
        }
        auto spec = std::find_if(attrs.begin(), attrs.end(), [&](const AttributeSpec& a) { return a.name == attr; });
        if (spec == attrs.end()) throw Error(Errc::type_mismatch, ann.type + " has no attribute '" + attr + "'");
        auto& slot = obj.slots[spec->name];
        if (value.is_array()) {
            for (const auto& v : value) slot.push_back(scalar(v, *spec));
        } else if (!value.is_null()) {
            slot.push_back(scalar(value, *spec));
        }
        if (slot.empty()) obj.slots.erase(spec->name);
    }
    if (obj.display_name.empty()) {
        if (graph.kind_of(*key) == ConceptKind::event) {
            // Same naming rule as parsed trigger-less events: attribute order of the slot map.
            std::vector<std::string> parts;
            for (const auto& [attr, values] : obj.slots) {
                for (const auto& v : values) {
                    if (v.kind == ValueKind::ref) {
                        auto it = std::find_if(stubs.begin(), stubs.end(), [&](auto& s) { return s.id == v.text; });
                        parts.push_back(it != stubs.end() ? it->display_name : v.text);
                    } else if (v.kind == ValueKind::number) {
                        parts.push_back(text::format_number(v.number));
                    } else {
                        parts.push_back(v.text);
                    }
                }
            }
            obj.display_name = text::join(parts, " | ");
        }
        if (obj.display_name.empty()) throw Error(Errc::type_mismatch, ann.type + " annotation lacks '" + identity + "'");
    }
    obj.id = object_id(graph, obj.concept_name, obj.display_name);
    stubs.push_back(std::move(obj));
    return stubs;
}

std::string_view training_task_name(TrainingTask t) noexcept {
    switch (t) {
    case TrainingTask::understanding: return "understanding";
    case TrainingTask::importing_closed: return "importing_closed";
    case TrainingTask::importing_open: return "importing_open";
    case TrainingTask::instantiation: return "instantiation";
    }
    return "understanding";
}

TrainingTask parse_training_task(std::string_view s) {
    for (auto t : {TrainingTask::understanding, TrainingTask::importing_closed, TrainingTask::importing_open,
                   TrainingTask::instantiation}) {
        if (s == training_task_name(t)) return t;
    }
    throw Error(Errc::precondition, "unknown training task '" + std::string(s) + "'");
}

std::vector<TrainingSample> generate_training_samples(const std::vector<IeExample>& dataset,
                                                      const OntologyGraph& graph, const std::string& ns,
                                                      const std::set<TrainingTask>& tasks) {
    std::vector<TrainingSample> out;
    std::set<std::string> understood;
    std::vector<std::string> all_types;
    for (const auto& key : graph.namespace_members(ns)) all_types.push_back(bare(key));

    for (const auto& ex : dataset) {
        std::vector<std::string> gold_types;
        std::vector<KnowledgeObject> gold_objects;
        for (const auto& ann : ex.annotations) {
            auto objs = annotation_to_objects(ann, graph, ns, ex.id);
            const auto& main = objs.back();
            if (std::find(gold_types.begin(), gold_types.end(), main.concept_name) == gold_types.end()) {
                gold_types.push_back(main.concept_name);
            }
            for (auto& o : objs) gold_objects.push_back(std::move(o));
        }
        if (gold_types.empty()) continue;

        if (tasks.count(TrainingTask::understanding)) {
            for (const auto& t : gold_types) {
                if (!understood.insert(t).second) continue;
                out.push_back({TrainingTask::understanding, render_schema_recall_prompt(ns, bare(t)),
                               render_class_code(graph, t)});
            }
        }
        std::vector<std::string> import_lines;
        for (const auto& t : gold_types) import_lines.push_back("Import " + bare(t));
        const std::string import_target = text::join(import_lines, "\n");
        if (tasks.count(TrainingTask::importing_closed)) {
            ExtractionRequest req{ex.text, ns, ExtractionMode::closed, all_types, ex.id, 0};
            out.push_back({TrainingTask::importing_closed, render_importing_prompt(req), import_target});
        }
        if (tasks.count(TrainingTask::importing_open)) {
            ExtractionRequest req{ex.text, ns, ExtractionMode::open, {}, ex.id, 0};
            out.push_back({TrainingTask::importing_open, render_importing_prompt(req), import_target});
        }
        if (tasks.count(TrainingTask::instantiation)) {
            out.push_back({TrainingTask::instantiation, render_instantiation_prompt(ns, gold_types, ex.text),
                           render_instantiation_code(gold_objects, graph)});
        }
    }
    return out;
}

std::string training_samples_to_jsonl(const std::vector<TrainingSample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["task"] = training_task_name(s.task);
        j["prompt"] = s.prompt;
        j["target"] = s.target;
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace kdr
