// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace kdr {

enum class ConceptKind { entity, event };

std::string_view kind_name(ConceptKind k) noexcept;
ConceptKind parse_kind(std::string_view s);

/// Root class name for a kind: "Entity" or "Event".
std::string_view root_name(ConceptKind k) noexcept;
bool is_root_name(std::string_view name) noexcept;

enum class ScalarType { text, number, date, ref };

struct ValueType {
    ScalarType scalar = ScalarType::text;
    bool is_list = false;
    std::string ref; ///< target concept name when scalar == ref

    /// Class-code token: text | number | date | List[text] | ... | Person | List[Person]
    std::string token() const;
    static ValueType parse(std::string_view token);

    friend bool operator==(const ValueType&, const ValueType&) = default;
};

struct AttributeSpec {
    std::string name;
    ValueType type;
    std::string doc;

    friend bool operator==(const AttributeSpec&, const AttributeSpec&) = default;
};

struct Concept {
    std::string name;
    std::string ns;
    ConceptKind kind = ConceptKind::entity;
    std::string parent; ///< empty means the kind root
    std::string description;
    std::vector<std::string> examples;
    std::vector<AttributeSpec> attributes;
    std::vector<std::string> equivalents;

    /// "ns.Name"
    std::string qualified() const { return ns + "." + name; }

    friend bool operator==(const Concept&, const Concept&) = default;
};

/// Implicit identifying slot: `name` for entities, `trigger` for events.
std::string_view identity_attribute(ConceptKind k) noexcept;

/// Code-represented ontology rooted at Entity and Event. Values are cheap to
/// copy (concepts are shared) and treated as immutable once published; every
/// mutation goes through a private copy.
class OntologyGraph {
public:
    OntologyGraph() = default;

    /// Inserts `c`, validating identifiers, parent, kind, cycles and
    /// attribute uniqueness (including inherited attributes).
    void add(Concept c);

    /// Inserts without checking attribute ref targets or equivalents, which
    /// may be declared later in a file. Call validate() once loading is done.
    void add_deferred(Concept c) { insert(std::move(c), false); }

    /// Replaces an existing definition with the same qualified name.
    void replace(Concept c);

    void add_dependency(const std::string& ns, const std::string& depends_on);
    void add_equivalence(std::string_view a, std::string_view b);

    /// Resolves a bare or qualified concept reference to its qualified key.
    /// Roots resolve to "Entity"/"Event". Bare names are searched in
    /// `context_ns`, its dependencies, then globally when unambiguous.
    std::optional<std::string> resolve(std::string_view ref, std::string_view context_ns = {}) const;
    /// As `resolve` but throws UnknownConcept.
    std::string require(std::string_view ref, std::string_view context_ns = {}) const;

    const Concept* find(std::string_view qualified) const;
    const Concept& at(std::string_view qualified) const;
    bool contains(std::string_view qualified) const { return find(qualified) != nullptr; }

    std::size_t size() const { return concepts_.size(); }
    bool empty() const { return concepts_.empty(); }

    /// Qualified names in insertion order.
    const std::vector<std::string>& order() const { return order_; }
    std::vector<std::string> namespace_members(std::string_view ns) const;
    std::vector<std::string> namespaces() const;
    const std::map<std::string, std::set<std::string>>& dependencies() const { return dependencies_; }

    ConceptKind kind_of(std::string_view qualified) const;
    /// Qualified parent key, or the root name.
    std::string parent_of(std::string_view qualified) const;
    /// Path from the node up to (and including) its root.
    std::vector<std::string> ancestors(std::string_view qualified) const;
    bool is_descendant(std::string_view node, std::string_view ancestor) const;
    std::vector<std::string> children(std::string_view qualified) const;

    /// Identity slot followed by inherited (root first) then own attributes.
    std::vector<AttributeSpec> effective_attributes(std::string_view qualified) const;
    std::optional<AttributeSpec> attribute(std::string_view qualified, std::string_view attr) const;

    /// Symmetric closure of declared equivalences, sorted, including `qualified`.
    std::vector<std::string> equivalence_class(std::string_view qualified) const;
    /// Lexicographically smallest member of the equivalence class.
    std::string canonical(std::string_view qualified) const;

    /// Checks references and equivalences that may have been declared
    /// before their targets (used after bulk loading).
    void validate() const;

private:
    void check_reference_targets(const Concept& c) const;
    void insert(Concept c, bool check_refs);

    std::map<std::string, std::shared_ptr<const Concept>, std::less<>> concepts_;
    std::vector<std::string> order_;
    std::map<std::string, std::set<std::string>> dependencies_;
    std::map<std::string, std::set<std::string>, std::less<>> equivalence_edges_;
};

/// Copy-on-update insertion: returns a new graph containing `c`.
OntologyGraph add_concept(const OntologyGraph& graph, Concept c);

int depth(const OntologyGraph& graph, std::string_view name);
std::string lowest_common_ancestor(const OntologyGraph& graph, std::string_view a, std::string_view b);
double wu_palmer(const OntologyGraph& graph, std::string_view a, std::string_view b);

/// Canonical class-definition code (4-space indent, docstring, constructor
/// signature ending in `: ...`). No trailing newline.
std::string render_class_code(const OntologyGraph& graph, std::string_view name);

/// Class code with the query concept rendered standalone (used for concepts
/// not yet attached to a graph).
std::string render_class_code(const OntologyGraph& graph, const Concept& c);

/// `From {ns} Import {n1}, {n2}` preserving order.
std::string render_import_clause(const OntologyGraph& graph, std::string_view ns,
                                 const std::vector<std::string>& names);

struct ParsedClass {
    std::string name;
    std::string parent;
    std::string description;
    std::vector<std::string> examples;
    std::vector<std::pair<std::string, std::string>> parameters; ///< (attr, type token)
};

/// Reads back a class block produced by render_class_code.
ParsedClass parse_class_code(std::string_view code);

OntologyGraph ontology_from_json(const nlohmann::json& doc);
nlohmann::json ontology_to_json(const OntologyGraph& graph);
OntologyGraph load_ontology(const std::string& path);
void save_ontology(const OntologyGraph& graph, const std::string& path);

nlohmann::json concept_to_json(const Concept& c);
Concept concept_from_json(const nlohmann::json& j, const std::string& ns);

} // namespace kdr
