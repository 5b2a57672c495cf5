// SPDX-License-Identifier: Apache-2.0
#include "kdr/ontology.hpp"

#include "kdr/error.hpp"
#include "kdr/text_util.hpp"

#include <algorithm>
#include <deque>

namespace kdr {
namespace {

constexpr std::string_view kEntity = "Entity";
constexpr std::string_view kEvent = "Event";

bool valid_namespace(std::string_view ns) {
    if (ns.empty()) return false;
    return std::all_of(ns.begin(), ns.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
    });
}

std::string bare(std::string_view qualified) {
    auto dot = qualified.rfind('.');
    return std::string(dot == std::string_view::npos ? qualified : qualified.substr(dot + 1));
}

std::string ns_of(std::string_view qualified) {
    auto dot = qualified.rfind('.');
    return dot == std::string_view::npos ? std::string() : std::string(qualified.substr(0, dot));
}

// Docstring payloads are kept on one line so the block stays parseable.
std::string escape_doc(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '"': out += "\\\""; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape_doc(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 >= s.size()) {
            out.push_back(s[i]);
            continue;
        }
        const char n = s[++i];
        switch (n) {
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        default: out.push_back(n);
        }
    }
    return out;
}

const nlohmann::json& require_key(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw Error(Errc::schema_violation, where + ": missing key '" + key + "'");
    return j.at(key);
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw Error(Errc::schema_violation, where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw Error(Errc::schema_violation, where + ": unknown key '" + key + "'");
        }
    }
}

std::string json_string(const nlohmann::json& j, const std::string& where) {
    if (!j.is_string()) throw Error(Errc::schema_violation, where + ": expected a string");
    return j.get<std::string>();
}

} // namespace

std::string_view kind_name(ConceptKind k) noexcept {
    return k == ConceptKind::entity ? "entity" : "event";
}

ConceptKind parse_kind(std::string_view s) {
    const auto lower = text::to_lower(s);
    if (lower == "entity") return ConceptKind::entity;
    if (lower == "event") return ConceptKind::event;
    throw Error(Errc::schema_violation, "unknown concept kind '" + std::string(s) + "'");
}

std::string_view root_name(ConceptKind k) noexcept {
    return k == ConceptKind::entity ? kEntity : kEvent;
}

bool is_root_name(std::string_view name) noexcept {
    return name == kEntity || name == kEvent;
}

std::string_view identity_attribute(ConceptKind k) noexcept {
    return k == ConceptKind::entity ? "name" : "trigger";
}

std::string ValueType::token() const {
    std::string inner;
    switch (scalar) {
    case ScalarType::text: inner = "text"; break;
    case ScalarType::number: inner = "number"; break;
    case ScalarType::date: inner = "date"; break;
    case ScalarType::ref: inner = bare(ref); break;
    }
    return is_list ? "List[" + inner + "]" : inner;
}

ValueType ValueType::parse(std::string_view token) {
    ValueType vt;
    std::string t = text::trim(token);
    if (t.rfind("List[", 0) == 0 && t.size() > 6 && t.back() == ']') {
        vt.is_list = true;
        t = text::trim(std::string_view(t).substr(5, t.size() - 6));
    }
    if (t == "text") {
        vt.scalar = ScalarType::text;
    } else if (t == "number") {
        vt.scalar = ScalarType::number;
    } else if (t == "date") {
        vt.scalar = ScalarType::date;
    } else {
        const auto name = bare(t);
        if (!text::is_concept_identifier(name)) {
            throw Error(Errc::schema_violation, "unknown attribute type token '" + std::string(token) + "'");
        }
        vt.scalar = ScalarType::ref;
        vt.ref = t;
    }
    return vt;
}

// ---------------------------------------------------------------------------
// OntologyGraph

std::optional<std::string> OntologyGraph::resolve(std::string_view ref, std::string_view context_ns) const {
    if (is_root_name(ref)) return std::string(ref);
    if (ref.find('.') != std::string_view::npos) {
        if (concepts_.count(ref)) return std::string(ref);
        return std::nullopt;
    }
    if (!context_ns.empty()) {
        auto local = std::string(context_ns) + "." + std::string(ref);
        if (concepts_.count(local)) return local;
        if (auto it = dependencies_.find(std::string(context_ns)); it != dependencies_.end()) {
            for (const auto& dep : it->second) {
                auto key = dep + "." + std::string(ref);
                if (concepts_.count(key)) return key;
            }
        }
        return std::nullopt;
    }
    std::optional<std::string> found;
    for (const auto& key : order_) {
        if (bare(key) == ref) {
            if (found) return std::nullopt; // ambiguous
            found = key;
        }
    }
    return found;
}

std::string OntologyGraph::require(std::string_view ref, std::string_view context_ns) const {
    auto r = resolve(ref, context_ns);
    if (!r) throw Error(Errc::unknown_concept, "unknown or ambiguous concept '" + std::string(ref) + "'");
    return *r;
}

const Concept* OntologyGraph::find(std::string_view qualified) const {
    auto it = concepts_.find(qualified);
    return it == concepts_.end() ? nullptr : it->second.get();
}

const Concept& OntologyGraph::at(std::string_view qualified) const {
    const auto* c = find(qualified);
    if (!c) throw Error(Errc::unknown_concept, "unknown concept '" + std::string(qualified) + "'");
    return *c;
}

std::vector<std::string> OntologyGraph::namespace_members(std::string_view ns) const {
    std::vector<std::string> out;
    for (const auto& key : order_) {
        if (ns_of(key) == ns) out.push_back(key);
    }
    return out;
}

std::vector<std::string> OntologyGraph::namespaces() const {
    std::set<std::string> seen;
    for (const auto& key : order_) seen.insert(ns_of(key));
    return {seen.begin(), seen.end()};
}

ConceptKind OntologyGraph::kind_of(std::string_view qualified) const {
    if (qualified == kEntity) return ConceptKind::entity;
    if (qualified == kEvent) return ConceptKind::event;
    return at(qualified).kind;
}

std::string OntologyGraph::parent_of(std::string_view qualified) const {
    const auto& c = at(qualified);
    if (c.parent.empty()) return std::string(root_name(c.kind));
    if (is_root_name(c.parent)) return c.parent;
    if (c.parent.find('.') != std::string::npos) return c.parent;
    return c.ns + "." + c.parent;
}

std::vector<std::string> OntologyGraph::ancestors(std::string_view qualified) const {
    std::vector<std::string> path;
    std::string cur(qualified);
    if (!is_root_name(cur)) at(cur);
    while (true) {
        path.push_back(cur);
        if (is_root_name(cur)) break;
        cur = parent_of(cur);
        if (path.size() > concepts_.size() + 2) throw Error(Errc::cycle_detected, "parent chain loops at " + cur);
    }
    return path;
}

bool OntologyGraph::is_descendant(std::string_view node, std::string_view ancestor) const {
    const auto path = ancestors(node);
    return std::find(path.begin(), path.end(), ancestor) != path.end();
}

std::vector<std::string> OntologyGraph::children(std::string_view qualified) const {
    std::vector<std::string> out;
    for (const auto& key : order_) {
        if (parent_of(key) == qualified) out.push_back(key);
    }
    return out;
}

std::vector<AttributeSpec> OntologyGraph::effective_attributes(std::string_view qualified) const {
    const auto kind = kind_of(qualified);
    std::vector<AttributeSpec> attrs;
    attrs.push_back(AttributeSpec{std::string(identity_attribute(kind)), ValueType{}, ""});
    auto path = ancestors(qualified);
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
        if (is_root_name(*it)) continue;
        for (const auto& a : at(*it).attributes) attrs.push_back(a);
    }
    return attrs;
}

std::optional<AttributeSpec> OntologyGraph::attribute(std::string_view qualified, std::string_view attr) const {
    for (auto& a : effective_attributes(qualified)) {
        if (a.name == attr) return a;
    }
    return std::nullopt;
}

std::vector<std::string> OntologyGraph::equivalence_class(std::string_view qualified) const {
    std::set<std::string> seen{std::string(qualified)};
    std::deque<std::string> queue{std::string(qualified)};
    while (!queue.empty()) {
        auto cur = queue.front();
        queue.pop_front();
        auto it = equivalence_edges_.find(cur);
        if (it == equivalence_edges_.end()) continue;
        for (const auto& next : it->second) {
            if (seen.insert(next).second) queue.push_back(next);
        }
    }
    return {seen.begin(), seen.end()};
}

std::string OntologyGraph::canonical(std::string_view qualified) const {
    return equivalence_class(qualified).front();
}

void OntologyGraph::check_reference_targets(const Concept& c) const {
    for (const auto& a : c.attributes) {
        if (a.type.scalar != ScalarType::ref) continue;
        if (a.type.ref == c.name || a.type.ref == c.qualified()) continue;
        if (!resolve(a.type.ref, c.ns)) {
            throw Error(Errc::unknown_concept,
                        c.qualified() + "." + a.name + " refers to unknown concept '" + a.type.ref + "'");
        }
    }
    for (const auto& e : c.equivalents) {
        auto target = resolve(e, c.ns);
        if (!target) target = resolve(e);
        if (!target) throw Error(Errc::unknown_concept, c.qualified() + " equivalent '" + e + "' is unknown");
        if (kind_of(*target) != c.kind) {
            throw Error(Errc::kind_mismatch, c.qualified() + " cannot be equivalent to " + *target);
        }
    }
}

void OntologyGraph::insert(Concept c, bool check_refs) {
    if (!valid_namespace(c.ns)) throw Error(Errc::invalid_identifier, "bad namespace '" + c.ns + "'");
    if (!text::is_concept_identifier(c.name) || is_root_name(c.name)) {
        throw Error(Errc::invalid_identifier, "bad concept name '" + c.name + "'");
    }
    const auto key = c.qualified();
    if (concepts_.count(key)) throw Error(Errc::duplicate_name, key + " already defined");

    if (c.parent == c.name || c.parent == key) throw Error(Errc::cycle_detected, key + " cannot be its own parent");
    if (c.parent.empty()) c.parent = std::string(root_name(c.kind));
    std::string parent_key;
    if (is_root_name(c.parent)) {
        parent_key = c.parent;
    } else {
        auto r = resolve(c.parent, c.ns);
        if (!r) throw Error(Errc::unknown_parent, key + ": parent '" + c.parent + "' not found");
        parent_key = *r;
        if (ns_of(parent_key) == c.ns) {
            c.parent = bare(parent_key);
        } else {
            c.parent = parent_key;
            dependencies_[c.ns].insert(ns_of(parent_key));
        }
    }
    if (kind_of(parent_key) != c.kind) {
        throw Error(Errc::kind_mismatch, key + " is " + std::string(kind_name(c.kind)) + " but parent " +
                                             parent_key + " is not");
    }

    std::set<std::string> seen{std::string(identity_attribute(c.kind))};
    if (!is_root_name(parent_key)) {
        for (const auto& a : effective_attributes(parent_key)) seen.insert(a.name);
    }
    for (const auto& a : c.attributes) {
        if (!text::is_attribute_identifier(a.name)) {
            throw Error(Errc::invalid_identifier, key + ": bad attribute name '" + a.name + "'");
        }
        if (!seen.insert(a.name).second) {
            throw Error(Errc::duplicate_name, key + ": attribute '" + a.name + "' already defined");
        }
    }
    if (check_refs) check_reference_targets(c);

    auto stored = std::make_shared<const Concept>(std::move(c));
    concepts_.emplace(key, stored);
    order_.push_back(key);
    for (const auto& e : stored->equivalents) {
        auto target = resolve(e, stored->ns);
        if (!target) target = resolve(e);
        if (target && *target != key) {
            equivalence_edges_[key].insert(*target);
            equivalence_edges_[*target].insert(key);
        }
    }
}

void OntologyGraph::add(Concept c) {
    insert(std::move(c), true);
}

void OntologyGraph::replace(Concept c) {
    const auto key = c.qualified();
    auto it = concepts_.find(key);
    if (it == concepts_.end()) throw Error(Errc::unknown_concept, key + " is not defined");
    auto previous = it->second;
    const auto position = std::find(order_.begin(), order_.end(), key) - order_.begin();
    concepts_.erase(it);
    order_.erase(order_.begin() + position);
    auto restore = [&] {
        concepts_[key] = previous;
        order_.erase(std::remove(order_.begin(), order_.end(), key), order_.end());
        order_.insert(order_.begin() + position, key);
    };
    try {
        if (!c.parent.empty() && !is_root_name(c.parent)) {
            // Walk up from the new parent; reaching the replaced node closes a loop.
            auto cur = resolve(c.parent, c.ns).value_or(c.parent);
            while (!is_root_name(cur)) {
                if (cur == key || bare(cur) == c.name) throw Error(Errc::cycle_detected, key + " would descend from itself");
                const auto* node = find(cur);
                if (!node) break;
                cur = node->parent.empty() || is_root_name(node->parent) ? std::string(root_name(node->kind))
                      : node->parent.find('.') != std::string::npos     ? node->parent
                                                                        : node->ns + "." + node->parent;
            }
        }
        insert(std::move(c), true);
        order_.pop_back();
        order_.insert(order_.begin() + position, key);
        for (const auto& other : order_) {
            if (other != key && is_descendant(other, key)) {
                std::set<std::string> seen;
                for (const auto& a : effective_attributes(other)) {
                    if (!seen.insert(a.name).second) {
                        throw Error(Errc::duplicate_name, other + ": attribute '" + a.name + "' now inherited twice");
                    }
                }
            }
        }
    } catch (...) {
        restore();
        throw;
    }
}

void OntologyGraph::add_dependency(const std::string& ns, const std::string& depends_on) {
    if (!valid_namespace(ns) || !valid_namespace(depends_on)) {
        throw Error(Errc::invalid_identifier, "bad namespace in dependency " + ns + " -> " + depends_on);
    }
    if (ns != depends_on) dependencies_[ns].insert(depends_on);
}

void OntologyGraph::add_equivalence(std::string_view a, std::string_view b) {
    const auto ka = require(a);
    const auto kb = require(b);
    if (is_root_name(ka) || is_root_name(kb)) throw Error(Errc::kind_mismatch, "roots have no equivalents");
    if (ka == kb) return;
    if (kind_of(ka) != kind_of(kb)) throw Error(Errc::kind_mismatch, ka + " and " + kb + " differ in kind");
    equivalence_edges_[ka].insert(kb);
    equivalence_edges_[kb].insert(ka);
    auto updated = at(ka);
    const auto label = ns_of(kb) == updated.ns ? bare(kb) : kb;
    if (std::find(updated.equivalents.begin(), updated.equivalents.end(), label) == updated.equivalents.end()) {
        updated.equivalents.push_back(label);
        concepts_[ka] = std::make_shared<const Concept>(std::move(updated));
    }
}

void OntologyGraph::validate() const {
    for (const auto& key : order_) {
        const auto& c = at(key);
        ancestors(key);
        check_reference_targets(c);
    }
}

OntologyGraph add_concept(const OntologyGraph& graph, Concept c) {
    OntologyGraph next = graph;
    next.add(std::move(c));
    return next;
}

// ---------------------------------------------------------------------------
// Hierarchy queries

int depth(const OntologyGraph& graph, std::string_view name) {
    return static_cast<int>(graph.ancestors(graph.require(name)).size());
}

std::string lowest_common_ancestor(const OntologyGraph& graph, std::string_view a, std::string_view b) {
    const auto ka = graph.require(a);
    const auto kb = graph.require(b);
    if (graph.kind_of(ka) != graph.kind_of(kb)) {
        throw Error(Errc::kind_mismatch, ka + " and " + kb + " live under different roots");
    }
    const auto path_a = graph.ancestors(ka);
    for (const auto& node : graph.ancestors(kb)) {
        if (std::find(path_a.begin(), path_a.end(), node) != path_a.end()) return node;
    }
    return std::string(root_name(graph.kind_of(ka)));
}

double wu_palmer(const OntologyGraph& graph, std::string_view a, std::string_view b) {
    const auto lca = lowest_common_ancestor(graph, a, b);
    const double da = depth(graph, a);
    const double db = depth(graph, b);
    return 2.0 * depth(graph, lca) / (da + db);
}

// ---------------------------------------------------------------------------
// Code rendering

std::string render_class_code(const OntologyGraph& graph, const Concept& c) {
    std::string parent_name;
    std::vector<AttributeSpec> attrs;
    if (graph.contains(c.qualified()) && graph.at(c.qualified()) == c) {
        parent_name = bare(graph.parent_of(c.qualified()));
        attrs = graph.effective_attributes(c.qualified());
    } else {
        // Standalone rendering: inherited attributes come from the resolved parent.
        const auto parent_key = c.parent.empty() ? std::optional<std::string>(std::string(root_name(c.kind)))
                                                 : graph.resolve(c.parent, c.ns);
        parent_name = parent_key ? bare(*parent_key) : bare(c.parent);
        if (parent_key && !is_root_name(*parent_key)) {
            attrs = graph.effective_attributes(*parent_key);
        } else {
            attrs.push_back(AttributeSpec{std::string(identity_attribute(c.kind)), ValueType{}, ""});
        }
        attrs.insert(attrs.end(), c.attributes.begin(), c.attributes.end());
    }

    std::string out;
    out += "class " + c.name + "(" + parent_name + "):\n";
    out += "    \"\"\"" + escape_doc(c.description) + "\n";
    out += "    Examples:\n";
    for (const auto& ex : c.examples) out += "    - " + escape_doc(ex) + "\n";
    out += "    \"\"\"\n";
    out += "    def __init__(self";
    for (const auto& a : attrs) out += ", " + a.name + ": " + a.type.token();
    out += "): ...";
    return out;
}

std::string render_class_code(const OntologyGraph& graph, std::string_view name) {
    const auto key = graph.require(name);
    if (is_root_name(key)) throw Error(Errc::unknown_concept, "roots have no class code");
    return render_class_code(graph, graph.at(key));
}

std::string render_import_clause(const OntologyGraph& graph, std::string_view ns,
                                 const std::vector<std::string>& names) {
    if (names.empty()) throw Error(Errc::empty_import, "import clause needs at least one type");
    std::string out = "From " + std::string(ns) + " Import ";
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!graph.contains(std::string(ns) + "." + names[i])) {
            throw Error(Errc::unknown_concept, names[i] + " is not in namespace " + std::string(ns));
        }
        if (i) out += ", ";
        out += names[i];
    }
    return out;
}

ParsedClass parse_class_code(std::string_view code) {
    const auto lines = text::split_lines(code);
    auto fail = [](const std::string& why) -> ParsedClass { throw Error(Errc::parse_failure, why); };
    if (lines.size() < 4) return fail("class block too short");

    ParsedClass pc;
    const auto& header = lines[0];
    if (header.rfind("class ", 0) != 0 || header.size() < 10 || header.substr(header.size() - 2) != "):") {
        return fail("bad class header: " + header);
    }
    auto open = header.find('(');
    if (open == std::string::npos) return fail("bad class header: " + header);
    pc.name = header.substr(6, open - 6);
    pc.parent = header.substr(open + 1, header.size() - open - 3);

    constexpr std::string_view doc_open = "    \"\"\"";
    if (lines[1].rfind(doc_open, 0) != 0) return fail("missing docstring");
    pc.description = unescape_doc(std::string_view(lines[1]).substr(doc_open.size()));
    if (lines[2] != "    Examples:") return fail("missing Examples section");
    std::size_t i = 3;
    for (; i < lines.size() && lines[i].rfind("    - ", 0) == 0; ++i) {
        pc.examples.push_back(unescape_doc(std::string_view(lines[i]).substr(6)));
    }
    if (i >= lines.size() || lines[i] != "    \"\"\"") return fail("unterminated docstring");
    ++i;
    constexpr std::string_view ctor = "    def __init__(self";
    if (i >= lines.size() || lines[i].rfind(ctor, 0) != 0) return fail("missing constructor");
    std::string_view sig = lines[i];
    constexpr std::string_view tail = "): ...";
    if (sig.size() < ctor.size() + tail.size() || sig.substr(sig.size() - tail.size()) != tail) {
        return fail("constructor must end with '): ...'");
    }
    sig = sig.substr(ctor.size(), sig.size() - ctor.size() - tail.size());
    // Parameters are ", name: Type" with no nested commas (List[...] has none).
    for (const auto& part : text::split(sig, ',')) {
        const auto p = text::trim(part);
        if (p.empty()) continue;
        auto colon = p.find(':');
        if (colon == std::string::npos) return fail("parameter without type: " + p);
        pc.parameters.emplace_back(text::trim(p.substr(0, colon)), text::trim(p.substr(colon + 1)));
    }
    return pc;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json concept_to_json(const Concept& c) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : c.attributes) {
        attrs.push_back({{"name", a.name}, {"type", a.type.token()}, {"doc", a.doc}});
    }
    return {
        {"name", c.name},
        {"kind", std::string(kind_name(c.kind))},
        {"parent", c.parent.empty() ? std::string(root_name(c.kind)) : c.parent},
        {"description", c.description},
        {"examples", c.examples},
        {"attributes", attrs},
        {"equivalents", c.equivalents},
    };
}

Concept concept_from_json(const nlohmann::json& j, const std::string& ns) {
    const std::string where = "concept in namespace " + ns;
    reject_unknown_keys(j, {"name", "kind", "parent", "description", "examples", "attributes", "equivalents"}, where);
    Concept c;
    c.ns = ns;
    c.name = json_string(require_key(j, "name", where), where);
    const std::string cw = ns + "." + c.name;
    c.kind = parse_kind(json_string(require_key(j, "kind", cw), cw));
    if (j.contains("parent")) c.parent = json_string(j["parent"], cw + ".parent");
    if (j.contains("description")) c.description = json_string(j["description"], cw + ".description");
    if (j.contains("examples")) {
        if (!j["examples"].is_array()) throw Error(Errc::schema_violation, cw + ".examples must be a list");
        for (const auto& e : j["examples"]) c.examples.push_back(json_string(e, cw + ".examples"));
    }
    if (j.contains("attributes")) {
        if (!j["attributes"].is_array()) throw Error(Errc::schema_violation, cw + ".attributes must be a list");
        for (const auto& a : j["attributes"]) {
            reject_unknown_keys(a, {"name", "type", "doc"}, cw + ".attributes");
            AttributeSpec spec;
            spec.name = json_string(require_key(a, "name", cw), cw + ".attributes.name");
            spec.type = ValueType::parse(json_string(require_key(a, "type", cw), cw + ".attributes.type"));
            if (a.contains("doc")) spec.doc = json_string(a["doc"], cw + ".attributes.doc");
            c.attributes.push_back(std::move(spec));
        }
    }
    if (j.contains("equivalents")) {
        if (!j["equivalents"].is_array()) throw Error(Errc::schema_violation, cw + ".equivalents must be a list");
        for (const auto& e : j["equivalents"]) c.equivalents.push_back(json_string(e, cw + ".equivalents"));
    }
    return c;
}

OntologyGraph ontology_from_json(const nlohmann::json& doc) {
    reject_unknown_keys(doc, {"namespaces", "dependencies"}, "ontology");
    const auto& spaces = require_key(doc, "namespaces", "ontology");
    if (!spaces.is_object()) throw Error(Errc::schema_violation, "ontology.namespaces must be an object");

    OntologyGraph graph;
    if (doc.contains("dependencies")) {
        const auto& deps = doc["dependencies"];
        if (!deps.is_object()) throw Error(Errc::schema_violation, "ontology.dependencies must be an object");
        for (const auto& [ns, list] : deps.items()) {
            if (!list.is_array()) throw Error(Errc::schema_violation, "dependencies." + ns + " must be a list");
            for (const auto& d : list) graph.add_dependency(ns, json_string(d, "dependencies." + ns));
        }
    }

    std::vector<Concept> pending;
    std::set<std::string> names;
    for (const auto& [ns, list] : spaces.items()) {
        if (!list.is_array()) throw Error(Errc::schema_violation, "namespace " + ns + " must be a list");
        for (const auto& item : list) {
            auto c = concept_from_json(item, ns);
            if (!names.insert(c.qualified()).second) {
                throw Error(Errc::schema_violation, "duplicate concept " + c.qualified());
            }
            pending.push_back(std::move(c));
        }
    }
    // Insert parents before children; equivalences and refs are checked at the end.
    while (!pending.empty()) {
        bool progress = false;
        for (auto it = pending.begin(); it != pending.end();) {
            const bool ready = it->parent.empty() || is_root_name(it->parent) || it->parent == it->name ||
                               graph.resolve(it->parent, it->ns).has_value();
            if (ready) {
                graph.add_deferred(std::move(*it));
                it = pending.erase(it);
                progress = true;
            } else {
                ++it;
            }
        }
        if (!progress) {
            // Either a parent loop among the pending concepts or a missing parent.
            const auto& c = pending.front();
            auto cur = c.parent;
            std::set<std::string> chain{c.name};
            while (true) {
                auto next = std::find_if(pending.begin(), pending.end(),
                                         [&](const Concept& p) { return p.name == cur || p.qualified() == cur; });
                if (next == pending.end()) break;
                if (!chain.insert(next->name).second) {
                    throw Error(Errc::cycle_detected, "parent loop through " + next->qualified());
                }
                cur = next->parent;
            }
            throw Error(Errc::unknown_parent, c.qualified() + ": parent '" + c.parent + "' not found");
        }
    }
    graph.validate();
    return graph;
}

nlohmann::json ontology_to_json(const OntologyGraph& graph) {
    nlohmann::json spaces = nlohmann::json::object();
    for (const auto& key : graph.order()) {
        const auto& c = graph.at(key);
        spaces[c.ns].push_back(concept_to_json(c));
    }
    nlohmann::json doc = {{"namespaces", spaces}};
    if (!graph.dependencies().empty()) {
        nlohmann::json deps = nlohmann::json::object();
        for (const auto& [ns, set] : graph.dependencies()) deps[ns] = std::vector<std::string>(set.begin(), set.end());
        doc["dependencies"] = deps;
    }
    return doc;
}

OntologyGraph load_ontology(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::schema_violation, path + ": " + e.what());
    }
    return ontology_from_json(doc);
}

void save_ontology(const OntologyGraph& graph, const std::string& path) {
    text::write_file(path, ontology_to_json(graph).dump(2) + "\n");
}

} // namespace kdr
