// SPDX-License-Identifier: Apache-2.0
#include "kdr/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kdr/text_util.hpp"

namespace kdr {

std::string_view relation_name(Relation r) noexcept {
    switch (r) {
    case Relation::parent_of_query: return "parent_of_query";
    case Relation::child_of_query: return "child_of_query";
    case Relation::equivalent: return "equivalent";
    case Relation::unrelated: return "unrelated";
    }
    return "unrelated";
}

std::optional<Relation> parse_relation(std::string_view token) {
    std::string t;
    for (char ch : text::to_lower(text::trim(token))) {
        t += (ch == ' ' || ch == '-') ? '_' : ch;
    }
    for (auto r : {Relation::parent_of_query, Relation::child_of_query, Relation::equivalent, Relation::unrelated}) {
        if (t == relation_name(r)) return r;
    }
    return std::nullopt;
}

std::string embedding_text(const Concept& c) { return c.name + ": " + c.description; }

EmbeddingIndex embed_ontology(const OntologyGraph& graph, LlmGateway& llm, Diagnostics* warnings) {
    EmbeddingIndex index;
    if (graph.empty()) return index;
    std::vector<std::string> texts;
    texts.reserve(graph.size());
    for (const auto& key : graph.order()) {
        const auto& c = graph.at(key);
        if (c.description.empty() && warnings) {
            warnings->push_back({Errc::precondition, key + " has an empty description"});
        }
        texts.push_back(embedding_text(c));
    }
    auto vectors = llm.embed(texts);
    for (std::size_t i = 0; i < graph.order().size(); ++i) index.emplace(graph.order()[i], std::move(vectors[i]));
    return index;
}

CandidateSet retrieve_candidates(const Concept& query, const EmbeddingVector& query_vector,
                                 const EmbeddingIndex& index, std::size_t k) {
    if (index.empty()) throw Error(Errc::precondition, "retrieve_candidates: empty index");
    if (k == 0) throw Error(Errc::precondition, "retrieve_candidates: k must be positive");
    CandidateSet out;
    out.query = query.qualified();
    std::vector<Candidate> all;
    all.reserve(index.size());
    for (const auto& [name, vec] : index) {
        if (name == out.query) continue;
        all.push_back({name, cosine(query_vector, vec)});
    }
    // Scores equal up to rounding noise rank as ties and fall back to name order.
    auto rank = [](double s) { return std::llround(s * 1e12); };
    auto better = [&](const Candidate& a, const Candidate& b) {
        if (rank(a.score) != rank(b.score)) return rank(a.score) > rank(b.score);
        return a.name < b.name;
    };
    const auto take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);
    all.resize(take);
    out.candidates = std::move(all);
    return out;
}

namespace {

std::string bare(std::string_view key) {
    auto dot = key.rfind('.');
    return std::string(dot == std::string_view::npos ? key : key.substr(dot + 1));
}

/// Bare names when they are unambiguous within the candidate list, else
/// qualified names.
std::vector<std::string> display_names(const CandidateSet& cands) {
    std::map<std::string, int> counts;
    for (const auto& c : cands.candidates) ++counts[bare(c.name)];
    std::vector<std::string> out;
    for (const auto& c : cands.candidates) out.push_back(counts[bare(c.name)] > 1 ? c.name : bare(c.name));
    return out;
}

std::string strip_decoration(std::string s) {
    s = text::trim(s);
    while (!s.empty() && (s.front() == '-' || s.front() == '*' || s.front() == '`' || s.front() == '"')) {
        s = text::trim(s.substr(1));
    }
    while (!s.empty() && (s.back() == '*' || s.back() == '`' || s.back() == '"')) s.pop_back();
    return text::trim(s);
}

} // namespace

std::string relation_prompt(const Concept& query, const CandidateSet& cands, const OntologyGraph& graph) {
    std::string p;
    p += "Decide how the query concept relates to each candidate concept. "
         "The concepts are given as class definitions.\n\n";
    p += "Query concept:\n" + render_class_code(graph, query) + "\n\n";
    p += "Candidate concepts:\n";
    for (const auto& c : cands.candidates) p += render_class_code(graph, c.name) + "\n\n";
    p += "For every candidate write one line `{candidate name}: {relation}` where relation is one of "
         "parent_of_query (the candidate is a parent of the query), child_of_query (the candidate is a child of "
         "the query), equivalent, unrelated.\nCandidates: ";
    p += text::join(display_names(cands), ", ");
    return p;
}

std::vector<RelationVerdict> parse_verdicts(std::string_view response, const CandidateSet& cands,
                                            Diagnostics* issues) {
    const auto names = display_names(cands);
    std::vector<std::optional<RelationVerdict>> found(cands.candidates.size());
    for (const auto& raw : text::split_lines(response)) {
        auto colon = raw.find(':');
        if (colon == std::string::npos) continue;
        auto who = text::to_lower(strip_decoration(raw.substr(0, colon)));
        std::size_t idx = cands.candidates.size();
        for (std::size_t i = 0; i < cands.candidates.size(); ++i) {
            if (who == text::to_lower(names[i]) || who == text::to_lower(cands.candidates[i].name)) {
                idx = i;
                break;
            }
        }
        if (idx == cands.candidates.size() || found[idx]) continue;
        auto rest = strip_decoration(raw.substr(colon + 1));
        // Relation token is the leading run of letters, underscores, spaces or hyphens
        // up to a separator such as '(' ',' ';' or '.'.
        auto stop = rest.find_first_of("(,;.[");
        auto token = text::trim(rest.substr(0, stop));
        auto rel = parse_relation(token);
        if (!rel) {
            // Allow trailing prose after a single-word relation.
            auto sp = token.find(' ');
            if (sp != std::string::npos) rel = parse_relation(token.substr(0, sp));
        }
        if (!rel) {
            if (issues) {
                issues->push_back({Errc::unparseable_verdict,
                                   cands.candidates[idx].name + ": unknown relation '" + token + "'"});
            }
            found[idx] = RelationVerdict{cands.candidates[idx].name, Relation::unrelated, rest};
            continue;
        }
        std::string rationale = stop == std::string::npos ? std::string{} : text::trim(rest.substr(stop));
        found[idx] = RelationVerdict{cands.candidates[idx].name, *rel, rationale};
    }
    std::vector<RelationVerdict> out;
    for (std::size_t i = 0; i < found.size(); ++i) {
        if (found[i]) {
            out.push_back(std::move(*found[i]));
            continue;
        }
        if (issues) issues->push_back({Errc::unparseable_verdict, cands.candidates[i].name + ": no verdict line"});
        out.push_back({cands.candidates[i].name, Relation::unrelated, {}});
    }
    return out;
}

std::vector<RelationVerdict> classify_relations(const Concept& query, const CandidateSet& cands,
                                                const OntologyGraph& graph, LlmGateway& llm, Diagnostics* issues) {
    for (const auto& c : cands.candidates) {
        if (!graph.contains(c.name)) throw Error(Errc::unknown_concept, "candidate " + c.name + " not in graph");
    }
    if (cands.candidates.empty()) return {};
    auto response = llm.ask(relation_prompt(query, cands, graph));
    return parse_verdicts(response, cands, issues);
}

namespace {

double score_of(const CandidateSet& cands, const std::string& name) {
    for (const auto& c : cands.candidates) {
        if (c.name == name) return c.score;
    }
    return -2.0;
}

/// Highest-cosine verdict with relation `r` whose target shares the query's kind.
std::optional<std::string> best_with(const std::vector<RelationVerdict>& verdicts, const CandidateSet& cands,
                                     const OntologyGraph& graph, const Concept& query, Relation r) {
    std::optional<std::string> best;
    double best_score = -3.0;
    for (const auto& v : verdicts) {
        if (v.relation != r || !graph.contains(v.candidate) || v.candidate == query.qualified()) continue;
        if (graph.kind_of(v.candidate) != query.kind) continue;
        double s = score_of(cands, v.candidate);
        if (!best || s > best_score || (s == best_score && v.candidate < *best)) {
            best = v.candidate;
            best_score = s;
        }
    }
    return best;
}

OntologyGraph attach(const OntologyGraph& graph, Concept c, const std::string& parent) {
    c.parent = parent;
    OntologyGraph g = graph;
    if (g.contains(c.qualified())) {
        g.replace(std::move(c));
    } else {
        g.add(std::move(c));
    }
    return g;
}

} // namespace

Expansion expand_ontology(const Concept& query, const std::vector<RelationVerdict>& verdicts,
                          const CandidateSet& cands, const OntologyGraph& graph, Diagnostics* issues) {
    const std::string root(root_name(query.kind));
    std::optional<std::string> equivalent = best_with(verdicts, cands, graph, query, Relation::equivalent);
    std::string parent = root;
    if (equivalent) {
        parent = graph.parent_of(*equivalent);
    } else if (auto p = best_with(verdicts, cands, graph, query, Relation::parent_of_query)) {
        parent = *p;
    }

    Expansion out;
    try {
        out.graph = attach(graph, query, parent);
        out.attached_parent = parent;
    } catch (const Error& e) {
        // Cycles and inherited-attribute clashes both fall back to the root.
        if (parent == root) throw;
        if (issues) issues->push_back({e.code(), query.qualified() + " under " + parent + ": " + e.what()});
        out.graph = attach(graph, query, root);
        out.attached_parent = root;
        equivalent.reset();
    }
    if (equivalent) {
        out.graph.add_equivalence(query.qualified(), *equivalent);
        out.equivalent_to = equivalent;
    }
    return out;
}

Expansion align_concept(const Concept& query, const OntologyGraph& graph, LlmGateway& llm, std::size_t k,
                        EmbeddingIndex* index, Diagnostics* issues) {
    EmbeddingIndex local;
    if (!index) {
        local = embed_ontology(graph, llm, issues);
        index = &local;
    }
    const auto qvec = llm.embed({embedding_text(query)}).front();
    // Candidates are limited to concepts currently in the graph.
    EmbeddingIndex visible;
    const EmbeddingIndex* search = index;
    if (index->size() != graph.size()) {
        for (const auto& [name, v] : *index) {
            if (graph.contains(name)) visible.emplace(name, v);
        }
        search = &visible;
    }
    Expansion out;
    if (search->empty() || (search->size() == 1 && search->count(query.qualified()))) {
        out = expand_ontology(query, {}, CandidateSet{query.qualified(), {}}, graph, issues);
    } else {
        auto cands = retrieve_candidates(query, qvec, *search, k);
        auto verdicts = classify_relations(query, cands, graph, llm, issues);
        out = expand_ontology(query, verdicts, cands, graph, issues);
    }
    (*index)[query.qualified()] = qvec;
    return out;
}

} // namespace kdr
