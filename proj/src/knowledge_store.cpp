// SPDX-License-Identifier: Apache-2.0
#include "kdr/knowledge_store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <mutex>
#include <sstream>

#include "kdr/http.hpp"
#include "kdr/text_util.hpp"

namespace kdr {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view value_kind_name(ValueKind k) noexcept {
    switch (k) {
    case ValueKind::text: return "text";
    case ValueKind::number: return "number";
    case ValueKind::date: return "date";
    case ValueKind::ref: return "ref";
    }
    return "text";
}

namespace {

ValueKind parse_value_kind(std::string_view s) {
    for (auto k : {ValueKind::text, ValueKind::number, ValueKind::date, ValueKind::ref}) {
        if (s == value_kind_name(k)) return k;
    }
    throw Error(Errc::schema_violation, "unknown value kind '" + std::string(s) + "'");
}

ValueKind expected_kind(const ValueType& t) {
    switch (t.scalar) {
    case ScalarType::text: return ValueKind::text;
    case ScalarType::number: return ValueKind::number;
    case ScalarType::date: return ValueKind::date;
    case ScalarType::ref: return ValueKind::ref;
    }
    return ValueKind::text;
}

std::string bare(std::string_view key) {
    auto dot = key.rfind('.');
    return std::string(dot == std::string_view::npos ? key : key.substr(dot + 1));
}

std::map<std::string, AttributeSpec> attribute_map(const OntologyGraph& graph, const std::string& concept_name) {
    std::map<std::string, AttributeSpec> out;
    for (auto& a : graph.effective_attributes(concept_name)) out.emplace(a.name, a);
    return out;
}

Timestamp provenance_time(const KnowledgeObject& o, std::size_t idx) {
    return idx < o.provenance.size() ? o.provenance[idx].timestamp : 0;
}

std::string provenance_source(const KnowledgeObject& o, std::size_t idx) {
    return idx < o.provenance.size() ? o.provenance[idx].source : std::string{};
}

} // namespace

bool SlotValue::same_value(const SlotValue& o) const {
    if (kind != o.kind) return false;
    return kind == ValueKind::number ? number == o.number : text == o.text;
}

std::pair<std::string, std::string> merge_key(const OntologyGraph& graph, const std::string& concept_name,
                                              const std::string& display_name) {
    return {graph.canonical(graph.require(concept_name)), text::normalize_name(display_name)};
}

std::string object_id(const OntologyGraph& graph, const std::string& concept_name, const std::string& display_name) {
    auto [c, n] = merge_key(graph, concept_name, display_name);
    return c + ":" + text::hex64(text::fnv1a64(c + '\x1f' + n));
}

void validate_object(const OntologyGraph& graph, const KnowledgeObject& obj) {
    if (!graph.contains(obj.concept_name)) throw Error(Errc::unknown_concept, "unknown concept '" + obj.concept_name + "'");
    if (text::trim(obj.display_name).empty()) {
        throw Error(Errc::type_mismatch, obj.concept_name + ": empty " + std::string(identity_attribute(graph.kind_of(obj.concept_name))));
    }
    const auto attrs = attribute_map(graph, obj.concept_name);
    const std::string identity(identity_attribute(graph.kind_of(obj.concept_name)));
    for (const auto& [name, values] : obj.slots) {
        auto it = attrs.find(name);
        if (it == attrs.end() || name == identity) {
            throw Error(Errc::type_mismatch, obj.concept_name + " has no attribute '" + name + "'");
        }
        const auto want = expected_kind(it->second.type);
        for (const auto& v : values) {
            if (v.kind != want) {
                throw Error(Errc::type_mismatch, obj.concept_name + "." + name + " expects " +
                                                     std::string(value_kind_name(want)) + ", got " +
                                                     std::string(value_kind_name(v.kind)));
            }
            if (v.provenance_index >= std::max<std::size_t>(obj.provenance.size(), 1)) {
                throw Error(Errc::type_mismatch, obj.concept_name + "." + name + ": provenance index out of range");
            }
        }
        if (!it->second.type.is_list && values.size() > 1) {
            throw Error(Errc::type_mismatch, obj.concept_name + "." + name + " is scalar but holds " +
                                                 std::to_string(values.size()) + " values");
        }
    }
}

KnowledgeObject merge_objects(const OntologyGraph& graph, const KnowledgeObject& a, const KnowledgeObject& b,
                              Diagnostics* issues) {
    if (merge_key(graph, a.concept_name, a.display_name) != merge_key(graph, b.concept_name, b.display_name)) {
        throw Error(Errc::key_mismatch, a.concept_name + "/" + a.display_name + " vs " + b.concept_name + "/" + b.display_name);
    }
    KnowledgeObject out = a;

    // Provenance: append b's entries not already present, remembering where they land.
    std::vector<std::size_t> remap(b.provenance.size());
    for (std::size_t i = 0; i < b.provenance.size(); ++i) {
        auto it = std::find(out.provenance.begin(), out.provenance.end(), b.provenance[i]);
        if (it == out.provenance.end()) {
            out.provenance.push_back(b.provenance[i]);
            remap[i] = out.provenance.size() - 1;
        } else {
            remap[i] = static_cast<std::size_t>(it - out.provenance.begin());
        }
    }
    auto moved = [&](SlotValue v) {
        v.provenance_index = v.provenance_index < remap.size() ? remap[v.provenance_index] : 0;
        return v;
    };

    const auto attrs = attribute_map(graph, out.concept_name);
    for (const auto& [name, values] : b.slots) {
        auto spec = attrs.find(name);
        if (spec == attrs.end()) {
            if (issues) issues->push_back({Errc::type_mismatch, out.concept_name + " lacks '" + name + "' from " + b.concept_name});
            continue;
        }
        auto& live = out.slots[name];
        if (spec->second.type.is_list) {
            for (const auto& v : values) {
                auto nv = moved(v);
                bool present = std::any_of(live.begin(), live.end(), [&](const SlotValue& x) { return x.same_value(nv); });
                if (!present) live.push_back(nv);
            }
            continue;
        }
        if (values.empty()) continue;
        auto incoming = moved(values.front());
        if (live.empty()) {
            live.push_back(incoming);
            continue;
        }
        if (live.front().same_value(incoming)) continue;
        // A re-delivered observation that already lost once stays superseded.
        const bool seen = std::any_of(out.history.begin(), out.history.end(), [&](const HistoryEntry& h) {
            return h.attribute == name && h.old_value.same_value(incoming) &&
                   h.old_value.provenance_index == incoming.provenance_index;
        });
        if (seen) continue;
        const Timestamp t_old = provenance_time(out, live.front().provenance_index);
        const Timestamp t_new = provenance_time(out, incoming.provenance_index);
        HistoryEntry e = t_new >= t_old
                             ? HistoryEntry{name, live.front(), provenance_source(out, live.front().provenance_index), t_new}
                             : HistoryEntry{name, incoming, provenance_source(out, incoming.provenance_index), t_old};
        if (t_new >= t_old) live.front() = incoming;
        if (std::find(out.history.begin(), out.history.end(), e) == out.history.end()) out.history.push_back(e);
    }
    for (auto it = out.slots.begin(); it != out.slots.end();) {
        it = it->second.empty() ? out.slots.erase(it) : std::next(it);
    }
    for (const auto& h : b.history) {
        HistoryEntry e = h;
        e.old_value = moved(h.old_value);
        if (std::find(out.history.begin(), out.history.end(), e) == out.history.end()) out.history.push_back(e);
    }
    out.updated_at = std::max(a.updated_at, b.updated_at);
    for (const auto& p : out.provenance) out.updated_at = std::max(out.updated_at, p.timestamp);
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

ordered_json value_to_json(const SlotValue& v) {
    ordered_json j;
    j["kind"] = value_kind_name(v.kind);
    if (v.kind == ValueKind::number) {
        j["value"] = v.number;
    } else {
        j["value"] = v.text;
    }
    j["prov"] = v.provenance_index;
    return j;
}

SlotValue value_from_json(const json& j) {
    SlotValue v;
    v.kind = parse_value_kind(j.at("kind").get<std::string>());
    if (v.kind == ValueKind::number) {
        v.number = j.at("value").get<double>();
    } else {
        v.text = j.at("value").get<std::string>();
    }
    v.provenance_index = j.value("prov", std::size_t{0});
    return v;
}

} // namespace

ordered_json object_to_json(const KnowledgeObject& obj) {
    ordered_json j;
    j["id"] = obj.id;
    j["concept"] = obj.concept_name;
    j["display_name"] = obj.display_name;
    ordered_json slots = ordered_json::object();
    for (const auto& [name, values] : obj.slots) {
        ordered_json arr = ordered_json::array();
        for (const auto& v : values) arr.push_back(value_to_json(v));
        slots[name] = arr;
    }
    j["slots"] = slots;
    ordered_json prov = ordered_json::array();
    for (const auto& p : obj.provenance) prov.push_back(ordered_json{{"source", p.source}, {"timestamp", p.timestamp}});
    j["provenance"] = prov;
    j["updated_at"] = obj.updated_at;
    ordered_json hist = ordered_json::array();
    for (const auto& h : obj.history) {
        hist.push_back(ordered_json{{"attribute", h.attribute},
                                    {"old_value", value_to_json(h.old_value)},
                                    {"source", h.source},
                                    {"replaced_at", h.replaced_at}});
    }
    j["history"] = hist;
    return j;
}

KnowledgeObject object_from_json(const json& j) {
    static const std::set<std::string> fields{"id", "concept", "display_name", "slots", "provenance", "updated_at", "history"};
    if (!j.is_object()) throw Error(Errc::schema_violation, "record is not an object");
    for (const auto& [k, v] : j.items()) {
        if (!fields.count(k)) throw Error(Errc::schema_violation, "unexpected field '" + k + "'");
    }
    KnowledgeObject o;
    o.id = j.at("id").get<std::string>();
    o.concept_name = j.at("concept").get<std::string>();
    o.display_name = j.at("display_name").get<std::string>();
    for (const auto& [name, arr] : j.at("slots").items()) {
        auto& values = o.slots[name];
        for (const auto& v : arr) values.push_back(value_from_json(v));
    }
    for (const auto& p : j.at("provenance")) {
        o.provenance.push_back({p.at("source").get<std::string>(), p.at("timestamp").get<Timestamp>()});
    }
    o.updated_at = j.at("updated_at").get<Timestamp>();
    for (const auto& h : j.at("history")) {
        o.history.push_back({h.at("attribute").get<std::string>(), value_from_json(h.at("old_value")),
                             h.value("source", std::string{}), h.at("replaced_at").get<Timestamp>()});
    }
    return o;
}

// ---------------------------------------------------------------------------
// Code rendering

namespace {

std::string render_scalar(const SlotValue& v, const std::map<std::string, std::string>& var_of,
                          const NameLookup& lookup) {
    switch (v.kind) {
    case ValueKind::number:
        if (!std::isfinite(v.number)) throw Error(Errc::unrenderable_value, "non-finite number");
        return text::format_number(v.number);
    case ValueKind::text:
    case ValueKind::date: return text::quote(v.text);
    case ValueKind::ref: {
        if (auto it = var_of.find(v.text); it != var_of.end()) return it->second;
        if (lookup) {
            if (auto name = lookup(v.text)) return text::quote(*name);
        }
        return text::quote(v.text);
    }
    }
    return {};
}

std::string render_call(const KnowledgeObject& obj, const OntologyGraph& graph,
                        const std::map<std::string, std::string>& var_of, const NameLookup& lookup) {
    const auto* c = graph.find(obj.concept_name);
    const std::string cls = c ? c->name : bare(obj.concept_name);
    const ConceptKind kind = c ? c->kind : ConceptKind::entity;
    std::string out = cls + "(" + std::string(identity_attribute(kind)) + "=" + text::quote(obj.display_name);
    std::vector<std::pair<std::string, bool>> order; // attribute, is_list
    if (c) {
        for (const auto& a : graph.effective_attributes(obj.concept_name)) order.emplace_back(a.name, a.type.is_list);
    }
    // Slots the schema does not know are still rendered, after the declared ones.
    for (const auto& [name, values] : obj.slots) {
        bool known = std::any_of(order.begin(), order.end(), [&](auto& p) { return p.first == name; });
        if (!known) order.emplace_back(name, values.size() > 1);
    }
    for (const auto& [name, is_list] : order) {
        auto it = obj.slots.find(name);
        if (it == obj.slots.end() || it->second.empty()) continue;
        out += ", " + name + "=";
        if (is_list) {
            out += "[";
            for (std::size_t i = 0; i < it->second.size(); ++i) {
                if (i) out += ", ";
                out += render_scalar(it->second[i], var_of, lookup);
            }
            out += "]";
        } else {
            out += render_scalar(it->second.front(), var_of, lookup);
        }
    }
    return out + ")";
}

bool has_refs(const KnowledgeObject& o) {
    for (const auto& [n, vs] : o.slots) {
        for (const auto& v : vs) {
            if (v.kind == ValueKind::ref) return true;
        }
    }
    return false;
}

} // namespace

std::string render_declaration_code(const std::vector<KnowledgeObject>& objects, const OntologyGraph& graph,
                                    const std::string& list_name, const NameLookup& lookup) {
    std::map<std::string, std::size_t> first_index;
    for (std::size_t i = 0; i < objects.size(); ++i) first_index.emplace(objects[i].id, i);

    enum class Mark { none, active, done };
    std::vector<Mark> mark(objects.size(), Mark::none);
    std::map<std::string, std::string> declared; // id -> variable, only for emitted objects
    std::string code;

    std::function<void(std::size_t)> visit = [&](std::size_t i) {
        mark[i] = Mark::active;
        for (const auto& [name, values] : objects[i].slots) {
            for (const auto& v : values) {
                if (v.kind != ValueKind::ref) continue;
                auto it = first_index.find(v.text);
                if (it != first_index.end() && mark[it->second] == Mark::none) visit(it->second);
            }
        }
        // Referees still active sit on a cycle; render_scalar falls back to their names.
        std::map<std::string, std::string> visible = declared;
        auto name_of = [&](const std::string& id) -> std::optional<std::string> {
            if (auto it = first_index.find(id); it != first_index.end()) return objects[it->second].display_name;
            return lookup ? lookup(id) : std::nullopt;
        };
        code += "o" + std::to_string(i) + " = " + render_call(objects[i], graph, visible, name_of) + "\n";
        declared.emplace(objects[i].id, "o" + std::to_string(i));
        mark[i] = Mark::done;
    };
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (mark[i] == Mark::none) visit(i);
    }
    code += list_name + " = [";
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i) code += ", ";
        code += "o" + std::to_string(i);
    }
    return code + "]";
}

std::string render_instantiation_code(const std::vector<KnowledgeObject>& objects, const OntologyGraph& graph) {
    if (std::any_of(objects.begin(), objects.end(), has_refs)) {
        return render_declaration_code(objects, graph, "results");
    }
    std::string code = "results = [";
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i) code += ", ";
        code += render_call(objects[i], graph, {}, nullptr);
    }
    return code + "]";
}

// ---------------------------------------------------------------------------
// External search

void ExternalSearch::index(const std::string& id, const std::map<std::string, std::string>& fields) {
    json body = {{"id", id}, {"fields", fields}};
    try {
        auto res = http::post_json(base_url_, "/index", body.dump(), {}, std::chrono::seconds(30));
        if (res.status < 200 || res.status >= 300) {
            throw Error(Errc::search_backend_unavailable, "index: HTTP " + std::to_string(res.status));
        }
    } catch (const Error& e) {
        if (e.code() == Errc::search_backend_unavailable) throw;
        throw Error(Errc::search_backend_unavailable, e.what());
    }
}

std::vector<ScoredId> ExternalSearch::query(const std::string& q, std::size_t limit) {
    json body = {{"text", q}, {"limit", limit}};
    http::Response res;
    try {
        res = http::post_json(base_url_, "/query", body.dump(), {}, std::chrono::seconds(30));
    } catch (const Error& e) {
        throw Error(Errc::search_backend_unavailable, e.what());
    }
    if (res.status < 200 || res.status >= 300) {
        throw Error(Errc::search_backend_unavailable, "query: HTTP " + std::to_string(res.status));
    }
    std::vector<ScoredId> out;
    try {
        for (const auto& r : json::parse(res.body).at("results")) {
            out.push_back({r.at("id").get<std::string>(), r.at("score").get<double>()});
        }
    } catch (const json::exception& e) {
        throw Error(Errc::search_backend_unavailable, std::string("query: malformed response: ") + e.what());
    }
    if (out.size() > limit) out.resize(limit);
    return out;
}

// ---------------------------------------------------------------------------
// Store

Timestamp system_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

KnowledgeStore::KnowledgeStore(OntologyGraph graph, Clock clock) : graph_(std::move(graph)), clock_(std::move(clock)) {
    if (!clock_) clock_ = system_clock_ms;
}

std::string KnowledgeStore::resolve_alias(const std::string& id) const {
    std::string cur = id;
    for (std::size_t guard = 0; guard <= aliases_.size(); ++guard) {
        auto it = aliases_.find(cur);
        if (it == aliases_.end()) return cur;
        cur = it->second;
    }
    return cur;
}

namespace {

std::string content_text(const KnowledgeObject& obj) {
    std::string t = obj.display_name;
    for (const auto& [name, values] : obj.slots) {
        for (const auto& v : values) {
            if (v.kind == ValueKind::text || v.kind == ValueKind::date) t += "\n" + v.text;
        }
    }
    return t;
}

} // namespace

void KnowledgeStore::index_object(const KnowledgeObject& obj) {
    content_index_.put(obj.id, content_text(obj));
    name_index_.put(obj.id, obj.display_name);
    for (const auto& [name, values] : obj.slots) {
        for (const auto& v : values) {
            if (v.kind == ValueKind::ref) incoming_[v.text].insert(obj.id);
        }
    }
    if (external_) {
        std::map<std::string, std::string> fields{{"display_name", obj.display_name}, {"concept", obj.concept_name},
                                                  {"text", content_text(obj)}};
        external_->index(obj.id, fields);
    }
}

void KnowledgeStore::unindex_object(const KnowledgeObject& obj) {
    content_index_.remove(obj.id);
    name_index_.remove(obj.id);
    for (const auto& [name, values] : obj.slots) {
        for (const auto& v : values) {
            if (v.kind != ValueKind::ref) continue;
            auto it = incoming_.find(v.text);
            if (it == incoming_.end()) continue;
            it->second.erase(obj.id);
            if (it->second.empty()) incoming_.erase(it);
        }
    }
}

std::string KnowledgeStore::ingest(KnowledgeObject obj, Diagnostics* issues) {
    std::unique_lock lock(mutex_);
    obj.concept_name = graph_.require(obj.concept_name);
    if (obj.provenance.empty()) obj.provenance.push_back({"", 0});
    const Timestamp now = clock_();
    for (auto& p : obj.provenance) {
        if (p.timestamp == 0) p.timestamp = now;
    }
    validate_object(graph_, obj);
    for (const auto& p : obj.provenance) obj.updated_at = std::max(obj.updated_at, p.timestamp);
    obj.id = object_id(graph_, obj.concept_name, obj.display_name);
    for (auto& [name, values] : obj.slots) {
        for (auto& v : values) {
            if (v.kind == ValueKind::ref) v.text = resolve_alias(v.text);
        }
    }
    const std::string id = resolve_alias(obj.id);
    obj.id = id;
    auto it = objects_.find(id);
    if (it == objects_.end()) {
        index_object(obj);
        objects_.emplace(id, std::move(obj));
        return id;
    }
    KnowledgeObject merged = merge_objects(graph_, it->second, obj, issues);
    unindex_object(it->second);
    it->second = std::move(merged);
    index_object(it->second);
    return id;
}

std::vector<std::string> KnowledgeStore::settle() {
    std::unique_lock lock(mutex_);
    std::set<std::string> dangling;
    for (auto& [id, obj] : objects_) {
        bool changed = false;
        for (auto& [name, values] : obj.slots) {
            for (auto& v : values) {
                if (v.kind != ValueKind::ref) continue;
                auto target = resolve_alias(v.text);
                if (target != v.text) {
                    v.text = target;
                    changed = true;
                }
                if (!objects_.count(v.text)) dangling.insert(v.text);
            }
        }
        if (changed) {
            // Deduplicate list values that collapsed onto the same target.
            for (auto& [name, values] : obj.slots) {
                std::vector<SlotValue> unique;
                for (auto& v : values) {
                    if (std::none_of(unique.begin(), unique.end(), [&](const SlotValue& u) { return u.same_value(v); })) {
                        unique.push_back(v);
                    }
                }
                values = std::move(unique);
            }
        }
    }
    incoming_.clear();
    for (const auto& [id, obj] : objects_) {
        for (const auto& [name, values] : obj.slots) {
            for (const auto& v : values) {
                if (v.kind == ValueKind::ref) incoming_[v.text].insert(id);
            }
        }
    }
    return {dangling.begin(), dangling.end()};
}

std::optional<KnowledgeObject> KnowledgeStore::get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = objects_.find(resolve_alias(id));
    if (it == objects_.end()) return std::nullopt;
    return it->second;
}

bool KnowledgeStore::contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return objects_.count(resolve_alias(id)) != 0;
}

std::size_t KnowledgeStore::size() const {
    std::shared_lock lock(mutex_);
    return objects_.size();
}

std::vector<KnowledgeObject> KnowledgeStore::objects() const {
    std::shared_lock lock(mutex_);
    std::vector<KnowledgeObject> out;
    out.reserve(objects_.size());
    for (const auto& [id, o] : objects_) out.push_back(o);
    return out;
}

std::map<std::string, std::size_t> KnowledgeStore::concept_counts() const {
    std::shared_lock lock(mutex_);
    std::map<std::string, std::size_t> out;
    for (const auto& [id, o] : objects_) ++out[o.concept_name];
    return out;
}

std::vector<KnowledgeObject> KnowledgeStore::query_by_name(const std::string& name, bool fuzzy) const {
    std::shared_lock lock(mutex_);
    std::vector<KnowledgeObject> out;
    if (!fuzzy) {
        const auto key = text::normalize_name(name);
        if (key.empty()) return out;
        for (const auto& [id, o] : objects_) {
            if (text::normalize_name(o.display_name) == key) out.push_back(o);
        }
        return out;
    }
    struct Hit {
        std::size_t overlap;
        const KnowledgeObject* obj;
    };
    std::vector<Hit> hits;
    for (const auto& s : name_index_.search(name, std::max<std::size_t>(objects_.size(), 1))) {
        const auto& o = objects_.at(s.id);
        hits.push_back({name_index_.overlap(s.id, name), &o});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.overlap != b.overlap) return a.overlap > b.overlap;
        if (a.obj->display_name != b.obj->display_name) return a.obj->display_name < b.obj->display_name;
        return a.obj->id < b.obj->id;
    });
    for (const auto& h : hits) out.push_back(*h.obj);
    return out;
}

std::vector<ScoredId> KnowledgeStore::fulltext_search(const std::string& query, std::size_t limit) const {
    std::shared_lock lock(mutex_);
    if (limit == 0) throw Error(Errc::precondition, "fulltext_search: limit must be >= 1");
    if (external_) return external_->query(query, limit);
    return content_index_.search(query, limit);
}

std::vector<KnowledgeObject> KnowledgeStore::subgraph(const std::vector<std::string>& seeds, int hops) const {
    std::shared_lock lock(mutex_);
    if (hops < 0) throw Error(Errc::precondition, "subgraph: hops must be >= 0");
    std::vector<std::string> order;
    std::set<std::string> seen;
    std::deque<std::pair<std::string, int>> queue;
    for (const auto& s : seeds) {
        auto id = resolve_alias(s);
        if (!objects_.count(id)) throw Error(Errc::unknown_id, "unknown id '" + s + "'");
        if (seen.insert(id).second) {
            order.push_back(id);
            queue.emplace_back(id, 0);
        }
    }
    while (!queue.empty()) {
        auto [id, d] = queue.front();
        queue.pop_front();
        if (d >= hops) continue;
        std::vector<std::string> next;
        const auto& obj = objects_.at(id);
        for (const auto& [name, values] : obj.slots) {
            for (const auto& v : values) {
                if (v.kind == ValueKind::ref) next.push_back(resolve_alias(v.text));
            }
        }
        if (auto in = incoming_.find(id); in != incoming_.end()) {
            for (const auto& r : in->second) next.push_back(r);
        }
        for (const auto& n : next) {
            if (!objects_.count(n) || !seen.insert(n).second) continue;
            order.push_back(n);
            queue.emplace_back(n, d + 1);
        }
    }
    std::vector<KnowledgeObject> out;
    for (const auto& id : order) out.push_back(objects_.at(id));
    return out;
}

std::string KnowledgeStore::render_declaration_code(const std::vector<KnowledgeObject>& objects) const {
    std::shared_lock lock(mutex_);
    NameLookup lookup = [this](const std::string& id) -> std::optional<std::string> {
        auto it = objects_.find(resolve_alias(id));
        if (it == objects_.end()) return std::nullopt;
        return it->second.display_name;
    };
    return kdr::render_declaration_code(objects, graph_, "search_results", lookup);
}

void KnowledgeStore::set_ontology(OntologyGraph graph) {
    std::unique_lock lock(mutex_);
    graph_ = std::move(graph);
    // Equivalences may have changed canonical concepts and therefore ids.
    std::map<std::string, KnowledgeObject> old;
    old.swap(objects_);
    content_index_.clear();
    name_index_.clear();
    incoming_.clear();
    for (auto& [id, obj] : old) {
        auto new_id = graph_.contains(obj.concept_name) ? object_id(graph_, obj.concept_name, obj.display_name) : id;
        if (new_id != id) aliases_[id] = new_id;
        obj.id = new_id;
        auto it = objects_.find(new_id);
        if (it == objects_.end()) {
            objects_.emplace(new_id, std::move(obj));
        } else {
            it->second = merge_objects(graph_, it->second, obj);
        }
    }
    for (const auto& [id, obj] : objects_) index_object(obj);
}

void KnowledgeStore::set_external_search(std::shared_ptr<ExternalSearch> ext) {
    std::unique_lock lock(mutex_);
    external_ = std::move(ext);
    if (external_) {
        for (const auto& [id, obj] : objects_) index_object(obj);
    }
}

void KnowledgeStore::save(const std::string& path) const {
    std::shared_lock lock(mutex_);
    std::string out;
    for (const auto& [id, obj] : objects_) out += object_to_json(obj).dump() + "\n";
    text::write_file(path, out);
}

void KnowledgeStore::insert_loaded(KnowledgeObject obj) {
    auto id = obj.id;
    index_object(obj);
    objects_.emplace(id, std::move(obj));
}

std::unique_ptr<KnowledgeStore> KnowledgeStore::load(const std::string& path, OntologyGraph graph, Clock clock) {
    auto store = std::make_unique<KnowledgeStore>(std::move(graph), std::move(clock));
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot read " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        KnowledgeObject obj;
        try {
            obj = object_from_json(json::parse(line));
            validate_object(store->graph_, obj);
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        } catch (const Error& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
        if (store->objects_.count(obj.id)) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": duplicate id " + obj.id, lineno);
        }
        store->insert_loaded(std::move(obj));
    }
    return store;
}

} // namespace kdr
