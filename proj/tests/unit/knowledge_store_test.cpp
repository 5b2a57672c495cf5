// SPDX-License-Identifier: Apache-2.0
#include "kdr/knowledge_store.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "kdr/text_util.hpp"

using namespace kdr;
namespace fs = std::filesystem;

namespace {

AttributeSpec attr(std::string name, std::string token) { return {std::move(name), ValueType::parse(token), ""}; }

OntologyGraph scholar() {
    OntologyGraph g;
    Concept person;
    person.name = "Person";
    person.ns = "Scholar";
    person.description = "A human individual.";
    person.attributes = {attr("affiliation", "text"), attr("residence", "text"), attr("papers", "List[text]"),
                         attr("knows", "List[Person]"), attr("age", "number")};
    g.add(person);
    Concept paper;
    paper.name = "Paper";
    paper.ns = "Scholar";
    paper.attributes = {attr("publication_date", "date"), attr("authors", "List[Person]"),
                        attr("citation_count", "number"), attr("venue", "text")};
    g.add(paper);
    Concept author;
    author.name = "Author";
    author.ns = "Scholar";
    author.parent = "Person";
    g.add(author);
    Concept authors;
    authors.name = "Authors";
    authors.ns = "Scholar";
    authors.parent = "Person";
    g.add(authors);
    return g;
}

KnowledgeObject person(std::string name, Timestamp t = 1, std::string source = "doc") {
    KnowledgeObject o;
    o.concept_name = "Scholar.Person";
    o.display_name = std::move(name);
    o.provenance = {{std::move(source), t}};
    return o;
}

Clock fixed_clock(Timestamp t) {
    return [t] { return t; };
}

std::vector<std::string> texts(const KnowledgeObject& o, const std::string& slot) {
    std::vector<std::string> out;
    auto it = o.slots.find(slot);
    if (it == o.slots.end()) return out;
    for (const auto& v : it->second) out.push_back(v.text);
    return out;
}

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::precondition;
}

} // namespace

TEST(KnowledgeStore, InsertIntoEmptyStore) {
    KnowledgeStore store(scholar(), fixed_clock(5));
    auto id = store.ingest(person("Ada"));
    EXPECT_EQ(store.size(), 1u);
    EXPECT_EQ(id, object_id(store.ontology(), "Scholar.Person", "Ada"));
    EXPECT_EQ(id.rfind("Scholar.Person:", 0), 0u);
}

TEST(KnowledgeStore, SameNameListSlotsUnion) {
    KnowledgeStore store(scholar());
    auto a = person("Geoffrey Hinton");
    a.slots["papers"] = {SlotValue::of_text("A")};
    auto b = person("geoffrey  hinton", 2, "doc2");
    b.slots["papers"] = {SlotValue::of_text("B")};
    store.ingest(a);
    auto id = store.ingest(b);
    ASSERT_EQ(store.size(), 1u);
    auto merged = *store.get(id);
    EXPECT_EQ(texts(merged, "papers"), (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(merged.display_name, "Geoffrey Hinton");
    EXPECT_EQ(merged.provenance.size(), 2u);
    EXPECT_EQ(merged.updated_at, 2);
}

TEST(KnowledgeStore, ScalarLatestWinsAndHistoryKeepsOld) {
    KnowledgeStore store(scholar());
    auto a = person("Hinton", 1, "s1");
    a.slots["residence"] = {SlotValue::of_text("Toronto")};
    auto b = person("Hinton", 2, "s2");
    b.slots["residence"] = {SlotValue::of_text("London")};
    store.ingest(a);
    auto merged = *store.get(store.ingest(b));
    EXPECT_EQ(texts(merged, "residence"), (std::vector<std::string>{"London"}));
    ASSERT_EQ(merged.history.size(), 1u);
    EXPECT_EQ(merged.history[0].attribute, "residence");
    EXPECT_EQ(merged.history[0].old_value.text, "Toronto");
    EXPECT_EQ(merged.history[0].source, "s1");
    EXPECT_EQ(merged.history[0].replaced_at, 2);
}

TEST(KnowledgeStore, OlderIncomingScalarLosesToHistory) {
    KnowledgeStore store(scholar());
    auto a = person("Hinton", 5, "new");
    a.slots["residence"] = {SlotValue::of_text("London")};
    auto b = person("Hinton", 3, "old");
    b.slots["residence"] = {SlotValue::of_text("Toronto")};
    store.ingest(a);
    auto merged = *store.get(store.ingest(b));
    EXPECT_EQ(texts(merged, "residence"), (std::vector<std::string>{"London"}));
    ASSERT_EQ(merged.history.size(), 1u);
    EXPECT_EQ(merged.history[0].old_value.text, "Toronto");
}

TEST(KnowledgeStore, IngestRejectsUnknownConceptAndBadTypes) {
    KnowledgeStore store(scholar());
    auto ghost = person("x");
    ghost.concept_name = "Scholar.Ghost";
    EXPECT_EQ(code_of([&] { store.ingest(ghost); }), Errc::unknown_concept);
    auto wrong = person("x");
    wrong.slots["age"] = {SlotValue::of_text("old")};
    EXPECT_EQ(code_of([&] { store.ingest(wrong); }), Errc::type_mismatch);
    auto unknown = person("x");
    unknown.slots["height"] = {SlotValue::of_number(2)};
    EXPECT_EQ(code_of([&] { store.ingest(unknown); }), Errc::type_mismatch);
    auto two = person("x");
    two.slots["residence"] = {SlotValue::of_text("a"), SlotValue::of_text("b")};
    EXPECT_EQ(code_of([&] { store.ingest(two); }), Errc::type_mismatch);
}

TEST(KnowledgeStore, MissingTimestampIsStampedByClock) {
    KnowledgeStore store(scholar(), fixed_clock(1234));
    auto o = person("Ada", 0);
    auto got = *store.get(store.ingest(o));
    EXPECT_EQ(got.provenance[0].timestamp, 1234);
    EXPECT_EQ(got.updated_at, 1234);
}

TEST(MergeObjects, IdempotentOnSelf) {
    auto g = scholar();
    auto x = person("Ada", 3);
    x.id = object_id(g, x.concept_name, x.display_name);
    x.updated_at = 3;
    x.slots["papers"] = {SlotValue::of_text("1"), SlotValue::of_text("2")};
    x.slots["residence"] = {SlotValue::of_text("Paris")};
    EXPECT_EQ(merge_objects(g, x, x), x);
}

TEST(MergeObjects, ListUnionKeepsFirstSeenOrder) {
    auto g = scholar();
    auto a = person("Ada");
    a.slots["papers"] = {SlotValue::of_text("1"), SlotValue::of_text("2")};
    auto b = person("Ada", 2, "d2");
    b.slots["papers"] = {SlotValue::of_text("2"), SlotValue::of_text("3")};
    auto m = merge_objects(g, a, b);
    EXPECT_EQ(texts(m, "papers"), (std::vector<std::string>{"1", "2", "3"}));
    // The provenance of "3" points at b's entry, now at index 1.
    EXPECT_EQ(m.slots["papers"][2].provenance_index, 1u);
}

TEST(MergeObjects, EqualTimestampsLaterIngestedWins) {
    auto g = scholar();
    auto a = person("Ada", 7, "first");
    a.slots["residence"] = {SlotValue::of_text("Paris")};
    auto b = person("Ada", 7, "second");
    b.slots["residence"] = {SlotValue::of_text("Rome")};
    EXPECT_EQ(texts(merge_objects(g, a, b), "residence"), (std::vector<std::string>{"Rome"}));
    EXPECT_EQ(texts(merge_objects(g, b, a), "residence"), (std::vector<std::string>{"Paris"}));
}

TEST(KnowledgeStore, ReingestingTiedBatchIsNoOp) {
    auto a = person("Hinton", 3, "s1");
    a.slots["residence"] = {SlotValue::of_text("Toronto")};
    auto b = person("Hinton", 3, "s2");
    b.slots["residence"] = {SlotValue::of_text("London")};
    KnowledgeStore once(scholar()), twice(scholar());
    once.ingest(a);
    once.ingest(b);
    for (int pass = 0; pass < 2; ++pass) {
        twice.ingest(a);
        twice.ingest(b);
    }
    EXPECT_EQ(once.objects(), twice.objects());
    auto merged = once.objects().front();
    EXPECT_EQ(texts(merged, "residence"), (std::vector<std::string>{"London"}));
    EXPECT_EQ(merged.history.size(), 1u);
}

TEST(MergeObjects, DifferentKeysAreRejected) {
    auto g = scholar();
    EXPECT_EQ(code_of([&] { merge_objects(g, person("Ada"), person("Bob")); }), Errc::key_mismatch);
}

TEST(MergeObjectsProperty, ListSetsAreOrderInsensitive) {
    auto g = scholar();
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        auto a = person("P", static_cast<Timestamp>(rng() % 4), "a");
        auto b = person("P", static_cast<Timestamp>(rng() % 4), "b");
        for (auto* o : {&a, &b}) {
            for (int i = 0, n = static_cast<int>(rng() % 5); i < n; ++i) {
                auto v = SlotValue::of_text("v" + std::to_string(rng() % 6));
                auto& slot = o->slots["papers"];
                if (std::none_of(slot.begin(), slot.end(), [&](auto& x) { return x.same_value(v); })) slot.push_back(v);
            }
            if (rng() % 2) o->slots["residence"] = {SlotValue::of_text("r" + std::to_string(rng() % 3))};
        }
        auto ab = merge_objects(g, a, b), ba = merge_objects(g, b, a);
        auto sa = texts(ab, "papers"), sb = texts(ba, "papers");
        ASSERT_EQ(std::set<std::string>(sa.begin(), sa.end()), std::set<std::string>(sb.begin(), sb.end()));
        // Scalar winner per policy: later timestamp, ties to the second argument.
        auto ra = texts(a, "residence"), rb = texts(b, "residence");
        if (!ra.empty() && !rb.empty()) {
            auto ta = a.provenance[0].timestamp, tb = b.provenance[0].timestamp;
            ASSERT_EQ(texts(ab, "residence").front(), tb >= ta ? rb.front() : ra.front());
            ASSERT_EQ(texts(ba, "residence").front(), ta >= tb ? ra.front() : rb.front());
        }
        ASSERT_EQ(merge_objects(g, ab, ab), ab);
    }
}

TEST(KnowledgeStore, EquivalentConceptsMergeAfterOntologyUpdate) {
    auto g = scholar();
    KnowledgeStore store(g);
    auto a = person("Ada");
    a.concept_name = "Scholar.Author";
    auto b = person("Ada", 2);
    b.concept_name = "Scholar.Authors";
    auto ida = store.ingest(a);
    store.ingest(b);
    EXPECT_EQ(store.size(), 2u);
    g.add_equivalence("Scholar.Author", "Scholar.Authors");
    store.set_ontology(g);
    EXPECT_EQ(store.size(), 1u);
    EXPECT_TRUE(store.contains(ida));
    auto c = person("ADA", 3);
    c.concept_name = "Scholar.Authors";
    store.ingest(c);
    EXPECT_EQ(store.size(), 1u);
}

namespace {

std::unique_ptr<KnowledgeStore> names_fixture() {
    auto s = std::make_unique<KnowledgeStore>(scholar(), fixed_clock(1));
    for (auto n : {"Geoffrey Hinton", "Hinton Lab", "Geoffrey Everest", "Yann LeCun"}) s->ingest(person(n));
    return s;
}

std::vector<std::string> display_names(const std::vector<KnowledgeObject>& xs) {
    std::vector<std::string> out;
    for (auto& x : xs) out.push_back(x.display_name);
    return out;
}

} // namespace

TEST(QueryByName, ExactUsesNormalization) {
    auto s = names_fixture();
    EXPECT_EQ(display_names(s->query_by_name("geoffrey   hinton")), (std::vector<std::string>{"Geoffrey Hinton"}));
    EXPECT_TRUE(s->query_by_name("Alan Turing").empty());
}

// Overlaps with {geoffrey, hinton}: Geoffrey Hinton 2, Geoffrey Everest 1,
// Hinton Lab 1, Yann LeCun 0; the two 1s are ordered by display name.
TEST(QueryByName, FuzzyRanksByTokenOverlap) {
    auto s = names_fixture();
    EXPECT_EQ(display_names(s->query_by_name("Geoffrey Hinton", true)),
              (std::vector<std::string>{"Geoffrey Hinton", "Geoffrey Everest", "Hinton Lab"}));
    auto h = display_names(s->query_by_name("Hinton", true));
    EXPECT_EQ(h, (std::vector<std::string>{"Geoffrey Hinton", "Hinton Lab"}));
    EXPECT_TRUE(s->query_by_name("Turing", true).empty());
}

namespace {

// Independent oracle: whitespace tokens over lower-cased display name and text
// slots, tf * ln(1 + N/df) summed over distinct query tokens.
std::vector<ScoredId> brute_force_tfidf(const std::vector<KnowledgeObject>& objs, const std::string& query) {
    auto toks = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream in(text::to_lower(s));
        for (std::string w; in >> w;) out.push_back(w);
        return out;
    };
    std::vector<std::map<std::string, int>> tf(objs.size());
    std::map<std::string, int> df;
    for (std::size_t i = 0; i < objs.size(); ++i) {
        std::string all = objs[i].display_name;
        for (auto& [n, vs] : objs[i].slots) {
            for (auto& v : vs) {
                if (v.kind == ValueKind::text || v.kind == ValueKind::date) all += " " + v.text;
            }
        }
        for (auto& t : toks(all)) ++tf[i][t];
        for (auto& [t, c] : tf[i]) ++df[t];
    }
    auto qt = toks(query);
    std::set<std::string> q(qt.begin(), qt.end());
    std::vector<ScoredId> out;
    for (std::size_t i = 0; i < objs.size(); ++i) {
        double s = 0;
        for (auto& t : q) {
            if (tf[i].count(t)) s += tf[i][t] * std::log(1.0 + double(objs.size()) / df[t]);
        }
        if (s > 0) out.push_back({objs[i].id, s});
    }
    std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; });
    return out;
}

} // namespace

TEST(FulltextSearch, SingleObjectAndNoTokenCases) {
    KnowledgeStore s(scholar());
    auto id = s.ingest(person("Ada Lovelace"));
    auto hits = s.fulltext_search("who is ada", 5);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].id, id);
    EXPECT_TRUE(s.fulltext_search("zzz", 5).empty());
    EXPECT_TRUE(s.fulltext_search("  ", 5).empty());
}

// Five objects, query "deep learning": df(deep)=2, df(learning)=3, N=5.
// A: deep x2, learning x1 -> 2 ln(3.5) + ln(8/3)
// B: learning x1 -> ln(8/3); C: deep x1 -> ln(3.5); D: learning x1 -> ln(8/3); E: 0.
TEST(FulltextSearch, FiveObjectFixtureMatchesHandComputation) {
    KnowledgeStore s(scholar());
    auto mk = [&](std::string name, std::string aff) {
        auto p = person(std::move(name));
        p.slots["affiliation"] = {SlotValue::of_text(std::move(aff))};
        return s.ingest(p);
    };
    auto a = mk("Alice", "deep learning deep");
    auto b = mk("Bob", "learning theory");
    auto c = mk("Carol", "deep sea");
    auto d = mk("Dan", "machine learning");
    mk("Eve", "cryptography");
    auto hits = s.fulltext_search("deep learning", 10);
    ASSERT_EQ(hits.size(), 4u);
    EXPECT_EQ(hits[0].id, a);
    EXPECT_NEAR(hits[0].score, 2 * std::log(3.5) + std::log(8.0 / 3), 1e-12);
    EXPECT_EQ(hits[1].id, c);
    EXPECT_NEAR(hits[1].score, std::log(3.5), 1e-12);
    // B and D tie; ids decide.
    EXPECT_EQ(hits[2].id, std::min(b, d));
    EXPECT_EQ(hits[3].id, std::max(b, d));
    EXPECT_EQ(hits, brute_force_tfidf(s.objects(), "deep learning"));
}

TEST(FulltextSearchProperty, AgreesWithBruteForceOracle) {
    std::mt19937_64 rng(11);
    const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta",
                                         "lambda", "zeta", "rho", "tau"};
    for (int trial = 0; trial < 6; ++trial) {
        KnowledgeStore s(scholar());
        const int n = 1 + static_cast<int>(rng() % 1000);
        for (int i = 0; i < n; ++i) {
            auto p = person("p" + std::to_string(i) + " " + vocab[rng() % vocab.size()]);
            std::string aff;
            for (int w = 0, m = static_cast<int>(rng() % 6); w < m; ++w) aff += vocab[rng() % vocab.size()] + " ";
            if (!aff.empty()) p.slots["affiliation"] = {SlotValue::of_text(aff)};
            s.ingest(p);
        }
        for (int q = 0; q < 10; ++q) {
            std::string query = vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()];
            auto expect = brute_force_tfidf(s.objects(), query);
            auto got = s.fulltext_search(query, 1000000);
            ASSERT_EQ(got.size(), expect.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                ASSERT_EQ(got[i].id, expect[i].id);
                ASSERT_NEAR(got[i].score, expect[i].score, 1e-9);
            }
        }
    }
}

namespace {

// Stores a Person graph where `edges[i]` lists the people node i knows.
std::vector<std::string> build_people(KnowledgeStore& s, const std::vector<std::string>& names,
                                      const std::vector<std::vector<int>>& edges) {
    std::vector<std::string> ids;
    for (auto& n : names) ids.push_back(object_id(s.ontology(), "Scholar.Person", n));
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto p = person(names[i]);
        for (int j : edges[i]) p.slots["knows"].push_back(SlotValue::of_ref(ids[j]));
        s.ingest(p);
    }
    return ids;
}

} // namespace

TEST(Subgraph, HopsZeroChainAndUnknownId) {
    KnowledgeStore s(scholar());
    auto ids = build_people(s, {"A", "B", "C"}, {{1}, {2}, {}});
    EXPECT_EQ(display_names(s.subgraph({ids[0]}, 0)), (std::vector<std::string>{"A"}));
    EXPECT_EQ(display_names(s.subgraph({ids[0]}, 1)), (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(display_names(s.subgraph({ids[2]}, 1)), (std::vector<std::string>{"C", "B"})) << "incoming edges count";
    EXPECT_EQ(code_of([&] { s.subgraph({"Scholar.Person:nope"}, 1); }), Errc::unknown_id);
}

// Diamond: A->B, A->C, B->D, C->D. From B with 2 hops, by hand:
// hop 1: out D, in A (sorted referrers) -> [D, A]; hop 2 from D: in B(seen), C -> C;
// from A: out B(seen), C(seen). Result B, D, A, C.
TEST(Subgraph, DiamondClosureByHandBfs) {
    KnowledgeStore s(scholar());
    auto ids = build_people(s, {"A", "B", "C", "D"}, {{1, 2}, {3}, {3}, {}});
    auto got = display_names(s.subgraph({ids[1]}, 2));
    EXPECT_EQ(got, (std::vector<std::string>{"B", "D", "A", "C"}));
    EXPECT_EQ(s.subgraph({ids[0]}, 2).size(), 4u);
}

TEST(RenderDeclaration, MinimalPerson) {
    auto g = scholar();
    auto p = person("Ada");
    p.id = object_id(g, p.concept_name, p.display_name);
    EXPECT_EQ(render_declaration_code({p}, g), "o0 = Person(name=\"Ada\")\nsearch_results = [o0]");
}

TEST(RenderDeclaration, RefereeDeclaredBeforeReferrer) {
    auto g = scholar();
    KnowledgeObject paper;
    paper.concept_name = "Scholar.Paper";
    paper.display_name = "Attention";
    paper.id = object_id(g, paper.concept_name, paper.display_name);
    auto ada = person("Ada");
    ada.id = object_id(g, ada.concept_name, ada.display_name);
    paper.slots["authors"] = {SlotValue::of_ref(ada.id), SlotValue::of_ref("Scholar.Person:external")};
    paper.slots["citation_count"] = {SlotValue::of_number(12)};
    paper.slots["publication_date"] = {SlotValue::of_date("2017-06-12")};
    auto code = render_declaration_code({paper, ada}, g, "search_results",
                                        [](const std::string&) { return std::optional<std::string>("Bob"); });
    EXPECT_EQ(code,
              "o1 = Person(name=\"Ada\")\n"
              "o0 = Paper(name=\"Attention\", publication_date=\"2017-06-12\", authors=[o1, \"Bob\"], "
              "citation_count=12)\n"
              "search_results = [o0, o1]");
}

TEST(RenderDeclaration, CycleFallsBackToDisplayName) {
    auto g = scholar();
    auto a = person("A"), b = person("B");
    a.id = object_id(g, a.concept_name, "A");
    b.id = object_id(g, b.concept_name, "B");
    a.slots["knows"] = {SlotValue::of_ref(b.id)};
    b.slots["knows"] = {SlotValue::of_ref(a.id)};
    EXPECT_EQ(render_declaration_code({a, b}, g),
              "o1 = Person(name=\"B\", knows=[\"A\"])\no0 = Person(name=\"A\", knows=[o1])\nsearch_results = [o0, o1]");
}

TEST(RenderDeclaration, NonFiniteNumberIsUnrenderable) {
    auto g = scholar();
    auto p = person("Ada");
    p.slots["age"] = {SlotValue::of_number(std::nan(""))};
    EXPECT_EQ(code_of([&] { render_declaration_code({p}, g); }), Errc::unrenderable_value);
}

TEST(RenderInstantiation, SingleLineWithoutRefs) {
    auto g = scholar();
    auto p = person("Ada");
    p.slots["affiliation"] = {SlotValue::of_text("MIT")};
    EXPECT_EQ(render_instantiation_code({p, person("Bob")}, g),
              "results = [Person(name=\"Ada\", affiliation=\"MIT\"), Person(name=\"Bob\")]");
}

namespace {

KnowledgeObject random_object(std::mt19937_64& rng, const OntologyGraph& g, const std::vector<std::string>& ids) {
    auto p = person("Name " + std::to_string(rng() % 1000000) + " \"q\"\n\\", static_cast<Timestamp>(rng() % 1000 + 1));
    p.provenance.push_back({"src" + std::to_string(rng() % 5), static_cast<Timestamp>(rng() % 1000 + 1)});
    if (rng() % 2) p.slots["affiliation"] = {SlotValue::of_text("Aff ü " + std::to_string(rng() % 50), rng() % 2)};
    if (rng() % 2) p.slots["age"] = {SlotValue::of_number(static_cast<double>(rng() % 10000) / 7.0)};
    for (int i = 0, n = static_cast<int>(rng() % 3); i < n; ++i) {
        p.slots["papers"].push_back(SlotValue::of_text("paper " + std::to_string(i)));
    }
    if (!ids.empty() && rng() % 2) p.slots["knows"] = {SlotValue::of_ref(ids[rng() % ids.size()])};
    if (rng() % 3 == 0) p.history.push_back({"residence", SlotValue::of_text("Old"), "src0", 5});
    p.id = object_id(g, p.concept_name, p.display_name);
    for (auto& pr : p.provenance) p.updated_at = std::max(p.updated_at, pr.timestamp);
    return p;
}

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "kdr_store_test";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(Persistence, EmptyStoreSavesEmptyFile) {
    KnowledgeStore s(scholar());
    auto path = temp_file("empty.jsonl");
    s.save(path.string());
    EXPECT_EQ(text::read_file(path.string()), "");
    EXPECT_EQ(KnowledgeStore::load(path.string(), scholar())->size(), 0u);
}

TEST(Persistence, HundredRandomObjectsRoundTrip) {
    std::mt19937_64 rng(100);
    auto g = scholar();
    KnowledgeStore s(g);
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) {
        auto o = random_object(rng, g, ids);
        ids.push_back(o.id);
        s.ingest(o);
    }
    auto path = temp_file("hundred.jsonl");
    s.save(path.string());
    auto loaded = KnowledgeStore::load(path.string(), g);
    EXPECT_EQ(loaded->objects(), s.objects());
    auto again = temp_file("hundred2.jsonl");
    loaded->save(again.string());
    EXPECT_EQ(text::read_file(path.string()), text::read_file(again.string()));
}

TEST(Persistence, RecordFieldsAreExactlyTheDocumentedSet) {
    KnowledgeStore s(scholar());
    s.ingest(person("Ada"));
    auto path = temp_file("fields.jsonl");
    s.save(path.string());
    auto j = nlohmann::ordered_json::parse(text::split_lines(text::read_file(path.string()))[0]);
    std::vector<std::string> keys;
    for (auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"id", "concept", "display_name", "slots", "provenance", "updated_at",
                                              "history"}));
}

TEST(Persistence, TruncatedLineReportsLineNumber) {
    KnowledgeStore s(scholar());
    s.ingest(person("Ada"));
    s.ingest(person("Bob"));
    auto path = temp_file("truncated.jsonl");
    s.save(path.string());
    auto content = text::read_file(path.string());
    content = content.substr(0, content.size() - 10);
    text::write_file(path.string(), content);
    try {
        KnowledgeStore::load(path.string(), scholar());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::corrupt_record);
        EXPECT_EQ(e.position(), 2u);
    }
    EXPECT_EQ(code_of([&] { KnowledgeStore::load("/nonexistent/kb.jsonl", scholar()); }), Errc::io_failure);
}

TEST(ReferentialIntegrityProperty, RandomRefGraphsSettleWithoutDangling) {
    std::mt19937_64 rng(5);
    auto g = scholar();
    for (int trial = 0; trial < 30; ++trial) {
        KnowledgeStore s(g);
        const int n = 2 + static_cast<int>(rng() % 30);
        // Every referenced person is also ingested (as the extractor does with stubs),
        // possibly under differently spelled names that merge onto the same key.
        for (int i = 0; i < n; ++i) {
            auto p = person("P" + std::to_string(i));
            for (int k = 0, m = static_cast<int>(rng() % 4); k < m; ++k) {
                int j = static_cast<int>(rng() % n);
                p.slots["knows"].push_back(SlotValue::of_ref(object_id(g, "Scholar.Person", "P" + std::to_string(j))));
                s.ingest(person(rng() % 2 ? "p" + std::to_string(j) : " P" + std::to_string(j) + "."));
            }
            auto& v = p.slots["knows"];
            std::vector<SlotValue> unique;
            for (auto& x : v) {
                if (std::none_of(unique.begin(), unique.end(), [&](auto& u) { return u.same_value(x); })) unique.push_back(x);
            }
            v = unique;
            if (v.empty()) p.slots.erase("knows");
            s.ingest(p);
        }
        ASSERT_TRUE(s.settle().empty()) << "trial " << trial;
    }
}

TEST(KnowledgeStore, ReadersRunAlongsideWriter) {
    KnowledgeStore s(scholar());
    std::atomic<bool> done{false};
    std::thread writer([&] {
        for (int i = 0; i < 300; ++i) s.ingest(person("Person " + std::to_string(i)));
        done = true;
    });
    std::size_t last = 0;
    while (!done) {
        auto snapshot = s.objects();
        ASSERT_GE(snapshot.size(), last);
        last = snapshot.size();
        s.fulltext_search("person", 3);
    }
    writer.join();
    EXPECT_EQ(s.size(), 300u);
}
