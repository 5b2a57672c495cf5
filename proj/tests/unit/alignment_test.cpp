// SPDX-License-Identifier: Apache-2.0
#include "kdr/alignment.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kdr/error.hpp"

using namespace kdr;
using nlohmann::json;

namespace {

Concept entity(std::string name, std::string parent = "", std::string desc = "") {
    Concept c;
    c.name = std::move(name);
    c.ns = "Scholar";
    c.parent = std::move(parent);
    c.description = std::move(desc);
    return c;
}

OntologyGraph people() {
    OntologyGraph g;
    g.add(entity("Person", "", "A human individual."));
    g.add(entity("Authors", "Person", "People who wrote a work."));
    g.add(entity("Venue", "", "Where papers are published."));
    return g;
}

CandidateSet cands_of(std::vector<std::pair<std::string, double>> xs) {
    CandidateSet s;
    s.query = "Scholar.Author";
    for (auto& [n, v] : xs) s.candidates.push_back({n, v});
    return s;
}

std::shared_ptr<LlmGateway> mock_answering(const std::string& answer) {
    MockScript s;
    s.default_response = answer;
    return LlmGateway::mock(s, 32);
}

} // namespace

TEST(EmbedOntology, OneVectorPerConceptAndDeterministic) {
    auto g = people();
    auto llm = mock_answering("");
    auto a = embed_ontology(g, *llm);
    auto b = embed_ontology(g, *llm);
    ASSERT_EQ(a.size(), 3u);
    for (const auto& [k, v] : a) EXPECT_EQ(v.size(), 32u);
    EXPECT_EQ(a, b);
}

TEST(EmbedOntology, EmptyDescriptionEmbedsNameColonAndWarns) {
    OntologyGraph g;
    g.add(entity("Thing"));
    auto llm = mock_answering("");
    Diagnostics warnings;
    auto idx = embed_ontology(g, *llm, &warnings);
    EXPECT_EQ(embedding_text(g.at("Scholar.Thing")), "Thing: ");
    EXPECT_EQ(idx.at("Scholar.Thing"), llm->embed({"Thing: "}).front());
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(RetrieveCandidates, IdenticalVectorRanksFirstAndOrthogonalScoresZero) {
    EmbeddingIndex idx{{"S.Same", {1, 0, 0}}, {"S.Ortho", {0, 1, 0}}, {"S.Half", {1, 1, 0}}};
    auto q = entity("Q");
    auto set = retrieve_candidates(q, {1, 0, 0}, idx, 10);
    ASSERT_EQ(set.candidates.size(), 3u);
    EXPECT_EQ(set.candidates[0].name, "S.Same");
    EXPECT_DOUBLE_EQ(set.candidates[0].score, 1.0);
    EXPECT_EQ(set.candidates[2].name, "S.Ortho");
    EXPECT_DOUBLE_EQ(set.candidates[2].score, 0.0);
}

TEST(RetrieveCandidates, ExcludesQueryAndBreaksTiesByName) {
    EmbeddingIndex idx{{"Scholar.Q", {1, 0}}, {"S.B", {0, 1}}, {"S.A", {0, 2}}};
    auto set = retrieve_candidates(entity("Q"), {1, 0}, idx, 5);
    ASSERT_EQ(set.candidates.size(), 2u);
    EXPECT_EQ(set.candidates[0].name, "S.A");
    EXPECT_EQ(set.candidates[1].name, "S.B");
}

namespace {

// Oracle: score everything, full sort, truncate.
std::vector<std::string> brute_force_top_k(const EmbeddingVector& q, const EmbeddingIndex& idx, std::size_t k) {
    std::vector<std::pair<double, std::string>> all;
    for (const auto& [n, v] : idx) {
        double dot = 0, nq = 0, nv = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            dot += q[i] * v[i];
            nq += q[i] * q[i];
            nv += v[i] * v[i];
        }
        all.emplace_back(dot / std::sqrt(nq * nv), n);
    }
    std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
    return out;
}

} // namespace

TEST(RetrieveCandidates, TwentyConceptTopFiveMatchesBruteForce) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss;
    EmbeddingIndex idx;
    for (int i = 0; i < 20; ++i) {
        EmbeddingVector v(16);
        for (auto& x : v) x = gauss(rng);
        idx["S.C" + std::to_string(i)] = v;
    }
    EmbeddingVector q(16);
    for (auto& x : q) x = gauss(rng);
    auto got = retrieve_candidates(entity("Q"), q, idx, 5);
    std::vector<std::string> names;
    for (auto& c : got.candidates) names.push_back(c.name);
    EXPECT_EQ(names, brute_force_top_k(q, idx, 5));
}

TEST(RetrieveCandidatesProperty, RandomInstancesAgreeWithOracle) {
    std::mt19937_64 rng(20240611);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 200, k = 1 + rng() % 20, dim = 1 + rng() % 12;
        EmbeddingIndex idx;
        // Small integer coordinates force frequent score ties.
        for (std::size_t i = 0; i < n; ++i) {
            EmbeddingVector v(dim);
            bool nonzero = false;
            for (auto& x : v) {
                x = static_cast<double>(static_cast<int>(rng() % 5) - 2);
                nonzero |= x != 0;
            }
            if (!nonzero) v[0] = 1;
            idx["S.N" + std::to_string(i)] = v;
        }
        EmbeddingVector q(dim, 0);
        q[rng() % dim] = 1;
        auto got = retrieve_candidates(entity("Q"), q, idx, k);
        std::vector<std::string> names;
        for (auto& c : got.candidates) names.push_back(c.name);
        ASSERT_EQ(names, brute_force_top_k(q, idx, k)) << "trial " << trial;
        for (std::size_t i = 1; i < got.candidates.size(); ++i) {
            ASSERT_GE(got.candidates[i - 1].score, got.candidates[i].score);
        }
    }
}

TEST(ClassifyRelations, ParsesScriptedParentVerdict) {
    auto g = people();
    auto llm = mock_answering("Person: parent_of_query");
    auto v = classify_relations(entity("Author"), cands_of({{"Scholar.Person", 0.9}}), g, *llm);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].relation, Relation::parent_of_query);
}

TEST(ClassifyRelations, PromptCarriesClassCodeOfQueryAndCandidates) {
    auto g = people();
    auto p = relation_prompt(entity("Author", "", "Writes papers."), cands_of({{"Scholar.Person", 0.9}, {"Scholar.Venue", 0.1}}), g);
    EXPECT_NE(p.find(render_class_code(g, entity("Author", "", "Writes papers."))), std::string::npos);
    EXPECT_NE(p.find(render_class_code(g, "Scholar.Person")), std::string::npos);
    EXPECT_NE(p.find(render_class_code(g, "Scholar.Venue")), std::string::npos);
}

TEST(ClassifyRelations, GarbageDefaultsToUnrelatedAndIsRecorded) {
    auto g = people();
    auto llm = mock_answering("I am not sure what you mean.");
    Diagnostics issues;
    auto v = classify_relations(entity("Author"), cands_of({{"Scholar.Person", 0.9}, {"Scholar.Venue", 0.2}}), g,
                                *llm, &issues);
    ASSERT_EQ(v.size(), 2u);
    for (auto& x : v) EXPECT_EQ(x.relation, Relation::unrelated);
    ASSERT_EQ(issues.size(), 2u);
    EXPECT_EQ(issues[0].code, Errc::unparseable_verdict);
}

TEST(ClassifyRelations, MissingThirdLineDefaultsUnrelated) {
    auto g = people();
    auto llm = mock_answering("  person :  Parent_Of_Query \n- Authors: equivalent (same idea)\n");
    Diagnostics issues;
    auto v = classify_relations(entity("Author"),
                                cands_of({{"Scholar.Person", 0.9}, {"Scholar.Authors", 0.8}, {"Scholar.Venue", 0.1}}),
                                g, *llm, &issues);
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0].relation, Relation::parent_of_query);
    EXPECT_EQ(v[1].relation, Relation::equivalent);
    EXPECT_EQ(v[1].rationale, "(same idea)");
    EXPECT_EQ(v[2].relation, Relation::unrelated);
    ASSERT_EQ(issues.size(), 1u);
    EXPECT_NE(issues[0].message.find("Scholar.Venue"), std::string::npos);
}

TEST(ClassifyRelations, UnknownCandidateIsRejected) {
    auto g = people();
    auto llm = mock_answering("");
    EXPECT_THROW(classify_relations(entity("Author"), cands_of({{"Scholar.Ghost", 1}}), g, *llm), Error);
}

TEST(ExpandOntology, SingleParentVerdictAttachesUnderIt) {
    auto g = people();
    auto cands = cands_of({{"Scholar.Person", 0.9}});
    auto e = expand_ontology(entity("Author"), {{"Scholar.Person", Relation::parent_of_query, ""}}, cands, g);
    EXPECT_EQ(e.attached_parent, "Scholar.Person");
    EXPECT_EQ(e.graph.parent_of("Scholar.Author"), "Scholar.Person");
    EXPECT_FALSE(g.contains("Scholar.Author"));
}

TEST(ExpandOntology, NoInformativeVerdictsFallsBackToRoot) {
    auto g = people();
    auto cands = cands_of({{"Scholar.Person", 0.9}});
    auto e = expand_ontology(entity("Author"), {{"Scholar.Person", Relation::unrelated, ""}}, cands, g);
    EXPECT_EQ(e.attached_parent, "Entity");
}

// Authors sits under Person; equivalence wins over the parent verdict, so the
// query lands beside Authors, i.e. under Person, and the equivalence is recorded.
TEST(ExpandOntology, EquivalentVerdictSharesParent) {
    auto g = people();
    auto cands = cands_of({{"Scholar.Venue", 0.95}, {"Scholar.Authors", 0.9}});
    auto e = expand_ontology(entity("Author"),
                             {{"Scholar.Venue", Relation::parent_of_query, ""},
                              {"Scholar.Authors", Relation::equivalent, ""}},
                             cands, g);
    EXPECT_EQ(e.attached_parent, "Scholar.Person");
    ASSERT_TRUE(e.equivalent_to);
    EXPECT_EQ(*e.equivalent_to, "Scholar.Authors");
    EXPECT_EQ(e.graph.equivalence_class("Scholar.Author"),
              (std::vector<std::string>{"Scholar.Author", "Scholar.Authors"}));
}

TEST(ExpandOntology, HighestCosineParentWins) {
    auto g = people();
    auto cands = cands_of({{"Scholar.Venue", 0.4}, {"Scholar.Person", 0.7}});
    auto e = expand_ontology(entity("Author"),
                             {{"Scholar.Venue", Relation::parent_of_query, ""},
                              {"Scholar.Person", Relation::parent_of_query, ""}},
                             cands, g);
    EXPECT_EQ(e.attached_parent, "Scholar.Person");
}

TEST(ExpandOntology, CycleVerdictFallsBackToRootAndIsRecorded) {
    auto g = people();
    // Re-aligning Person under its own child.
    auto cands = cands_of({{"Scholar.Authors", 0.9}});
    Diagnostics issues;
    auto e = expand_ontology(g.at("Scholar.Person"), {{"Scholar.Authors", Relation::parent_of_query, ""}}, cands, g,
                             &issues);
    EXPECT_EQ(e.attached_parent, "Entity");
    ASSERT_EQ(issues.size(), 1u);
    EXPECT_EQ(issues[0].code, Errc::cycle_detected);
}

TEST(ExpandOntology, OtherKindCandidatesAreIgnored) {
    auto g = people();
    Concept attack = entity("Attack");
    attack.kind = ConceptKind::event;
    g.add(attack);
    Concept strike = entity("Strike");
    strike.kind = ConceptKind::event;
    auto e = expand_ontology(strike, {{"Scholar.Person", Relation::parent_of_query, ""}},
                             cands_of({{"Scholar.Person", 0.9}}), g);
    EXPECT_EQ(e.attached_parent, "Event");
}

TEST(ExpandOntology, CrossNamespaceParentAddsDependency) {
    auto g = people();
    Concept author = entity("Author");
    author.ns = "Bib";
    auto e = expand_ontology(author, {{"Scholar.Person", Relation::parent_of_query, ""}},
                             cands_of({{"Scholar.Person", 0.9}}), g);
    EXPECT_EQ(e.graph.parent_of("Bib.Author"), "Scholar.Person");
    EXPECT_TRUE(e.graph.dependencies().at("Bib").count("Scholar"));
}

namespace {

bool is_forest(const OntologyGraph& g) {
    for (const auto& key : g.order()) {
        auto chain = g.ancestors(key);
        if (chain.empty() || !is_root_name(chain.back())) return false;
        if (chain.back() != root_name(g.kind_of(key))) return false;
    }
    return true;
}

} // namespace

TEST(ExpandOntologyProperty, AdversarialVerdictsKeepForest) {
    std::mt19937_64 rng(99);
    const Relation rels[] = {Relation::parent_of_query, Relation::child_of_query, Relation::equivalent,
                             Relation::unrelated};
    OntologyGraph g;
    g.add(entity("N0"));
    for (int step = 1; step < 80; ++step) {
        // Either insert a fresh concept or re-align an existing one.
        Concept q = rng() % 3 == 0 ? g.at(g.order()[rng() % g.size()]) : entity("N" + std::to_string(step));
        CandidateSet cands;
        cands.query = q.qualified();
        std::vector<RelationVerdict> verdicts;
        for (int i = 0; i < 5; ++i) {
            const auto& name = g.order()[rng() % g.size()];
            cands.candidates.push_back({name, static_cast<double>(rng() % 100) / 100});
            verdicts.push_back({name, rels[rng() % 4], ""});
        }
        auto e = expand_ontology(q, verdicts, cands, g);
        ASSERT_TRUE(is_forest(e.graph)) << "step " << step;
        ASSERT_NO_THROW(e.graph.validate());
        g = e.graph;
    }
}

TEST(AlignConcept, ScriptedGoldParentEndToEnd) {
    auto g = people();
    MockScript s;
    s.rules.push_back({{"Query concept:\nclass Author("}, std::nullopt, {"Person: parent_of_query"}});
    auto llm = LlmGateway::mock(s, 32);
    EmbeddingIndex idx = embed_ontology(g, *llm);
    auto e = align_concept(entity("Author", "", "Someone who writes."), g, *llm, 10, &idx);
    EXPECT_EQ(e.attached_parent, "Scholar.Person");
    EXPECT_TRUE(idx.count("Scholar.Author"));
}
