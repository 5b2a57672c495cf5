// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdr/error.hpp"
#include "kdr/llm.hpp"
#include "kdr/ontology.hpp"

namespace kdr {

/// Qualified concept name -> embedding of `"{name}: {description}"`.
using EmbeddingIndex = std::map<std::string, EmbeddingVector>;

struct Candidate {
    std::string name; ///< qualified
    double score = 0;
};

struct CandidateSet {
    std::string query;
    std::vector<Candidate> candidates; ///< descending score, ties by name
};

enum class Relation { parent_of_query, child_of_query, equivalent, unrelated };

std::string_view relation_name(Relation r) noexcept;
std::optional<Relation> parse_relation(std::string_view token);

struct RelationVerdict {
    std::string candidate; ///< qualified
    Relation relation = Relation::unrelated;
    std::string rationale;
};

struct Expansion {
    OntologyGraph graph;
    std::string attached_parent;            ///< qualified name or root
    std::optional<std::string> equivalent_to;
};

inline constexpr std::size_t kDefaultCandidateCount = 10;

std::string embedding_text(const Concept& c);

/// Empty descriptions are embedded as `"{name}: "` and reported as warnings.
EmbeddingIndex embed_ontology(const OntologyGraph& graph, LlmGateway& llm, Diagnostics* warnings = nullptr);

/// Exact top-k by cosine; the query's own key is excluded.
CandidateSet retrieve_candidates(const Concept& query, const EmbeddingVector& query_vector,
                                 const EmbeddingIndex& index, std::size_t k = kDefaultCandidateCount);

/// Prompt listing the query class code and every candidate class code.
std::string relation_prompt(const Concept& query, const CandidateSet& cands, const OntologyGraph& graph);

/// One verdict per candidate in candidate order. Missing or unknown lines
/// default to unrelated and are recorded as UnparseableVerdict.
std::vector<RelationVerdict> parse_verdicts(std::string_view response, const CandidateSet& cands,
                                            Diagnostics* issues = nullptr);

std::vector<RelationVerdict> classify_relations(const Concept& query, const CandidateSet& cands,
                                                const OntologyGraph& graph, LlmGateway& llm,
                                                Diagnostics* issues = nullptr);

/// Attaches `query` according to the verdicts: equivalent first, then the
/// best parent_of_query, then the kind root. Candidates of another kind are
/// never chosen. A verdict that would close a cycle or clash with inherited
/// attributes falls back to the root and is recorded.
Expansion expand_ontology(const Concept& query, const std::vector<RelationVerdict>& verdicts,
                          const CandidateSet& cands, const OntologyGraph& graph, Diagnostics* issues = nullptr);

/// Embed, retrieve, classify and expand for one concept. When `index` is
/// given it is used (and extended with the query) instead of re-embedding.
Expansion align_concept(const Concept& query, const OntologyGraph& graph, LlmGateway& llm,
                        std::size_t k = kDefaultCandidateCount, EmbeddingIndex* index = nullptr,
                        Diagnostics* issues = nullptr);

} // namespace kdr
