// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdr/error.hpp"
#include "kdr/fulltext.hpp"
#include "kdr/ontology.hpp"

namespace kdr {

/// Milliseconds since the Unix epoch.
using Timestamp = std::int64_t;

enum class ValueKind { text, number, date, ref };

std::string_view value_kind_name(ValueKind k) noexcept;

struct SlotValue {
    ValueKind kind = ValueKind::text;
    std::string text; ///< text, date text, or referenced object id
    double number = 0;
    std::size_t provenance_index = 0;

    static SlotValue of_text(std::string s, std::size_t prov = 0) { return {ValueKind::text, std::move(s), 0, prov}; }
    static SlotValue of_date(std::string s, std::size_t prov = 0) { return {ValueKind::date, std::move(s), 0, prov}; }
    static SlotValue of_number(double v, std::size_t prov = 0) { return {ValueKind::number, {}, v, prov}; }
    static SlotValue of_ref(std::string id, std::size_t prov = 0) { return {ValueKind::ref, std::move(id), 0, prov}; }

    /// Equality of the carried value, ignoring provenance.
    bool same_value(const SlotValue& o) const;

    friend bool operator==(const SlotValue&, const SlotValue&) = default;
};

struct Provenance {
    std::string source;
    Timestamp timestamp = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct HistoryEntry {
    std::string attribute;
    SlotValue old_value;
    std::string source; ///< provenance source of the superseded value
    Timestamp replaced_at = 0;

    friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct KnowledgeObject {
    std::string id;
    std::string concept_name; ///< qualified
    std::string display_name;
    std::map<std::string, std::vector<SlotValue>> slots; ///< identity slot excluded
    std::vector<Provenance> provenance;
    Timestamp updated_at = 0;
    std::vector<HistoryEntry> history;

    friend bool operator==(const KnowledgeObject&, const KnowledgeObject&) = default;
};

/// Merge key: (canonical concept_name, normalized display name).
std::pair<std::string, std::string> merge_key(const OntologyGraph& graph, const std::string& concept_name,
                                              const std::string& display_name);

/// Stable id derived from the merge key: "{canonical concept_name}:{16 hex digits}".
std::string object_id(const OntologyGraph& graph, const std::string& concept_name, const std::string& display_name);

/// Checks concept_name, slot keys, value kinds and scalar cardinality.
/// Throws UnknownConcept or TypeMismatch.
void validate_object(const OntologyGraph& graph, const KnowledgeObject& obj);

/// Union of two objects sharing a merge key. `b` is the later-ingested one.
/// List slots: set union in first-seen order. Scalar slots: latest provenance
/// timestamp wins, ties go to `b`; losers move to history. Throws KeyMismatch.
KnowledgeObject merge_objects(const OntologyGraph& graph, const KnowledgeObject& a, const KnowledgeObject& b,
                              Diagnostics* issues = nullptr);

nlohmann::ordered_json object_to_json(const KnowledgeObject& obj);
KnowledgeObject object_from_json(const nlohmann::json& j);

/// Display-name lookup for refs that point outside the rendered list.
using NameLookup = std::function<std::optional<std::string>(const std::string& id)>;

/// Constructor-call code for `objects`. Each object becomes `o{i}` (i = input
/// position); declarations are emitted so referees precede referrers, and the
/// program ends with `{list_name} = [o0, o1, ...]`. Refs outside the list or
/// along a cycle are rendered as the referee's display name string.
/// Throws UnrenderableValue for non-finite numbers.
std::string render_declaration_code(const std::vector<KnowledgeObject>& objects, const OntologyGraph& graph,
                                    const std::string& list_name = "search_results",
                                    const NameLookup& lookup = nullptr);

/// Canonical instantiation rendering: `results = [Call, Call]` on one line
/// when no object carries a ref, otherwise the declaration form ending in
/// `results = [...]`.
std::string render_instantiation_code(const std::vector<KnowledgeObject>& objects, const OntologyGraph& graph);

/// Optional HTTP full-text service: POST {base}/index {id, fields} and
/// POST {base}/query {text, limit} -> {results: [{id, score}]}.
class ExternalSearch {
public:
    explicit ExternalSearch(std::string base_url) : base_url_(std::move(base_url)) {}
    void index(const std::string& id, const std::map<std::string, std::string>& fields);
    std::vector<ScoredId> query(const std::string& text, std::size_t limit);

private:
    std::string base_url_;
};

using Clock = std::function<Timestamp()>;
Timestamp system_clock_ms();

/// Knowledge base: keyed objects with merge-on-ingest, a built-in full-text
/// index, ref-aware subgraph queries and JSON-lines persistence. Readers share
/// a lock; ingestion takes it exclusively.
class KnowledgeStore {
public:
    explicit KnowledgeStore(OntologyGraph graph, Clock clock = system_clock_ms);

    KnowledgeStore(const KnowledgeStore&) = delete;
    KnowledgeStore& operator=(const KnowledgeStore&) = delete;

    /// Validates, assigns the keyed id, merges with an existing object of the
    /// same key and re-indexes. Missing provenance timestamps are stamped with
    /// the clock. Returns the stored id.
    std::string ingest(KnowledgeObject obj, Diagnostics* issues = nullptr);

    /// Rewrites refs through the alias table and returns the ids of refs that
    /// still point nowhere.
    std::vector<std::string> settle();

    std::optional<KnowledgeObject> get(const std::string& id) const;
    bool contains(const std::string& id) const;
    std::size_t size() const;
    /// All objects ordered by id.
    std::vector<KnowledgeObject> objects() const;
    std::map<std::string, std::size_t> concept_counts() const;

    std::vector<KnowledgeObject> query_by_name(const std::string& name, bool fuzzy = false) const;
    std::vector<ScoredId> fulltext_search(const std::string& query, std::size_t limit) const;
    /// Breadth-first closure over ref slots in both directions. Throws UnknownId.
    std::vector<KnowledgeObject> subgraph(const std::vector<std::string>& seeds, int hops) const;

    std::string render_declaration_code(const std::vector<KnowledgeObject>& objects) const;

    const OntologyGraph& ontology() const { return graph_; }
    /// Swaps in a newer ontology (e.g. after alignment added equivalences).
    void set_ontology(OntologyGraph graph);
    void set_external_search(std::shared_ptr<ExternalSearch> ext);

    void save(const std::string& path) const;
    static std::unique_ptr<KnowledgeStore> load(const std::string& path, OntologyGraph graph,
                                                Clock clock = system_clock_ms);

private:
    std::string resolve_alias(const std::string& id) const;
    void index_object(const KnowledgeObject& obj);
    void unindex_object(const KnowledgeObject& obj);
    void insert_loaded(KnowledgeObject obj);

    OntologyGraph graph_;
    Clock clock_;
    std::map<std::string, KnowledgeObject> objects_;
    std::map<std::string, std::string> aliases_;
    std::map<std::string, std::set<std::string>> incoming_; ///< referee -> referrers
    InvertedIndex content_index_;
    InvertedIndex name_index_;
    std::shared_ptr<ExternalSearch> external_;
    mutable std::shared_mutex mutex_;
};

} // namespace kdr
