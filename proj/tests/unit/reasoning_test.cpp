// SPDX-License-Identifier: Apache-2.0
#include "kdr/reasoning.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <random>
#include <set>

#include "kdr/error.hpp"
#include "kdr/text_util.hpp"

using namespace kdr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

AttributeSpec attr(std::string name, std::string token) { return {std::move(name), ValueType::parse(token), ""}; }

Concept entity(std::string name, std::string desc, std::vector<AttributeSpec> attrs, std::string parent = "") {
    Concept c;
    c.name = std::move(name);
    c.ns = "S";
    c.description = std::move(desc);
    c.attributes = std::move(attrs);
    c.parent = std::move(parent);
    return c;
}

/// Paper, Person, Venue; descriptions chosen so the tf-idf ranking is easy to follow by hand.
OntologyGraph scholar() {
    OntologyGraph g;
    g.add(entity("Person", "A human researcher.", {attr("affiliation", "text")}));
    g.add(entity("Venue", "Where papers are published.", {}));
    g.add(entity("Paper", "A published research paper and its citation record.",
                 {attr("authors", "List[Person]"), attr("citation_count", "number"), attr("venue", "Venue")}));
    return g;
}

KnowledgeObject obj(const OntologyGraph& g, std::string concept_name, std::string name,
                    std::map<std::string, std::vector<SlotValue>> slots = {}) {
    KnowledgeObject o;
    o.concept_name = std::move(concept_name);
    o.display_name = std::move(name);
    o.id = object_id(g, o.concept_name, o.display_name);
    o.slots = std::move(slots);
    o.provenance = {{"fixture", 1}};
    return o;
}

std::string id_of(const OntologyGraph& g, const std::string& c, const std::string& n) { return object_id(g, c, n); }

/// Hinton wrote Backprop (in Nature) and AlexNet (with Ilya); Turing is unrelated.
std::unique_ptr<KnowledgeStore> hinton_store() {
    auto g = scholar();
    auto store = std::make_unique<KnowledgeStore>(g, [] { return Timestamp{10}; });
    store->ingest(obj(g, "S.Person", "Geoffrey Hinton", {{"affiliation", {SlotValue::of_text("Toronto")}}}));
    store->ingest(obj(g, "S.Person", "Ilya"));
    store->ingest(obj(g, "S.Person", "Alan Turing"));
    store->ingest(obj(g, "S.Venue", "Nature"));
    store->ingest(obj(g, "S.Paper", "Backprop",
                      {{"authors", {SlotValue::of_ref(id_of(g, "S.Person", "Geoffrey Hinton"))}},
                       {"citation_count", {SlotValue::of_number(30000)}},
                       {"venue", {SlotValue::of_ref(id_of(g, "S.Venue", "Nature"))}}}));
    store->ingest(obj(g, "S.Paper", "AlexNet",
                      {{"authors",
                        {SlotValue::of_ref(id_of(g, "S.Person", "Geoffrey Hinton")),
                         SlotValue::of_ref(id_of(g, "S.Person", "Ilya"))}},
                       {"citation_count", {SlotValue::of_number(100000)}}}));
    return store;
}

std::shared_ptr<LlmGateway> mock_of(json script) { return LlmGateway::mock(MockScript::from_json(script), 16); }

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "kdr-reasoning-XXXXXX").string();
        path_ = mkdtemp(tmpl.data());
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string sub(const std::string& name) const { return (fs::path(path_) / name).string(); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

std::size_t position_of(const std::function<void()>& fn, Errc expected) {
    try {
        fn();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), expected) << e.what();
        return e.position().value_or(std::string::npos);
    }
    ADD_FAILURE() << "expected an error";
    return std::string::npos;
}

} // namespace

// --- decomposition -----------------------------------------------------------

TEST(Decomposition, SingleWebSearch) {
    auto plans = parse_decomposition("<begin_web_search>q1<end_web_search>");
    ASSERT_EQ(plans.size(), 1u);
    EXPECT_EQ(plans[0].section_title, "Findings");
    ASSERT_EQ(plans[0].requests.size(), 1u);
    EXPECT_EQ(plans[0].requests[0], (CycleRequest{RequestKind::web_search, "q1"}));
}

TEST(Decomposition, InterleavedOrderAndSections) {
    auto plans = parse_decomposition(
        "# Plan\n\n## Output\nFirst <begin_data_analysis>count papers<end_data_analysis>, then\n"
        "<begin_web_search>news about <awards><end_web_search>\n"
        "<begin_data_analysis>\ncitations per year\n<end_data_analysis>\n## Empty section\ntext only\n"
        "### Impact ###\n<begin_web_search>impact<end_web_search>");
    ASSERT_EQ(plans.size(), 2u);
    EXPECT_EQ(plans[0].section_title, "Output");
    ASSERT_EQ(plans[0].requests.size(), 3u);
    EXPECT_EQ(plans[0].requests[0], (CycleRequest{RequestKind::data_analysis, "count papers"}));
    EXPECT_EQ(plans[0].requests[1], (CycleRequest{RequestKind::web_search, "news about <awards>"}));
    EXPECT_EQ(plans[0].requests[2], (CycleRequest{RequestKind::data_analysis, "citations per year"}));
    EXPECT_EQ(plans[1], (CyclePlan{"Impact", {{RequestKind::web_search, "impact"}}}));
}

TEST(Decomposition, ErrorsCarryPositions) {
    const std::string unclosed = "intro <begin_data_analysis>count";
    EXPECT_EQ(position_of([&] { parse_decomposition(unclosed); }, Errc::unbalanced_tags), 6u);
    const std::string nested = "<begin_web_search>a <begin_web_search>b<end_web_search>";
    EXPECT_EQ(position_of([&] { parse_decomposition(nested); }, Errc::unbalanced_tags), 20u);
    const std::string stray = "x<end_web_search>";
    EXPECT_EQ(position_of([&] { parse_decomposition(stray); }, Errc::unbalanced_tags), 1u);
    const std::string mismatch = "<begin_web_search>a<end_data_analysis>";
    EXPECT_EQ(position_of([&] { parse_decomposition(mismatch); }, Errc::unbalanced_tags), 19u);
    const std::string unknown = "<begin_poem>a<end_poem>";
    EXPECT_EQ(position_of([&] { parse_decomposition(unknown); }, Errc::unbalanced_tags), 0u);
    const std::string empty = "ok <begin_web_search>  \n <end_web_search>";
    EXPECT_EQ(position_of([&] { parse_decomposition(empty); }, Errc::empty_query), 3u);
}

TEST(DecompositionProperty, RenderParseIdentity) {
    std::mt19937 rng(1234);
    const std::vector<std::string> words{"papers", "citations", "Hinton", "growth", "2012", "x<y", "#tag", "a-b"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<CyclePlan> plans;
        const int sections = 1 + static_cast<int>(rng() % 4);
        for (int s = 0; s < sections; ++s) {
            CyclePlan p;
            p.section_title = "Section " + std::to_string(s) + " " + words[rng() % words.size()];
            const int reqs = 1 + static_cast<int>(rng() % 4);
            for (int r = 0; r < reqs; ++r) {
                std::string q = words[rng() % words.size()];
                for (int w = static_cast<int>(rng() % 5); w > 0; --w) q += " " + words[rng() % words.size()];
                p.requests.push_back({rng() % 2 ? RequestKind::data_analysis : RequestKind::web_search, q});
            }
            plans.push_back(p);
        }
        EXPECT_EQ(parse_decomposition(render_decomposition(plans)), plans);
    }
}

// --- ontology search ---------------------------------------------------------

TEST(OntologySearch, HandTfIdf) {
    // Query tokens: papers, published, citation (N = 3 concepts).
    //   published: Venue, Paper -> df 2; papers: Venue -> df 1; citation: Paper (twice) -> df 1.
    //   Paper = 1*ln(1+3/2) + 2*ln(1+3/1); Venue = 1*ln(1+3/1) + 1*ln(1+3/2); Person = 0.
    auto g = scholar();
    auto hits = ontology_search("papers published citation", g, 5);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].name, "S.Paper");
    EXPECT_NEAR(hits[0].score, std::log(2.5) + 2 * std::log(4.0), 1e-12);
    EXPECT_EQ(hits[1].name, "S.Venue");
    EXPECT_NEAR(hits[1].score, std::log(4.0) + std::log(2.5), 1e-12);
    EXPECT_EQ(hits[0].class_code, render_class_code(g, "S.Paper"));
}

TEST(OntologySearch, LimitAndEmptyQuery) {
    auto g = scholar();
    auto one = ontology_search("papers published citation", g, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].name, "S.Paper");
    EXPECT_EQ(position_of([&] { ontology_search("?! ...", g, 3); }, Errc::no_concept_found), std::string::npos);
    EXPECT_THROW(ontology_search("paper", g, 0), Error);
}

// --- code generation ---------------------------------------------------------

TEST(CodeGeneration, ReturnsFencedBlockVerbatim) {
    auto llm = mock_of({{"default_response", "Here you go:\n```python\nprint(len(search_results))\n```\nDone."}});
    EXPECT_EQ(generate_analysis_code("count", {"class A(Entity): ..."}, std::nullopt, *llm),
              "print(len(search_results))\n");
}

TEST(CodeGeneration, RejectsCodeWithoutSearchResults) {
    auto llm = mock_of({{"default_response", "```python\nprint(42)\n```"}});
    EXPECT_EQ(position_of([&] { generate_analysis_code("q", {"class A(Entity): ..."}, std::nullopt, *llm); },
                          Errc::rejected_code),
              std::string::npos);
}

TEST(CodeGeneration, FeedbackEntersThePrompt) {
    auto llm = mock_of({{"default_response", "print(search_results)"}});
    generate_analysis_code("q", {"class A(Entity): ..."}, std::string("NameError: x is undefined"), *llm);
    const auto entries = llm->transcript().entries();
    ASSERT_EQ(entries.size(), 1u);
    const auto prompt = entries[0]["messages"][0]["content"].get<std::string>();
    EXPECT_NE(prompt.find("Feedback on the previous attempt:\nNameError: x is undefined"), std::string::npos);
    EXPECT_NE(prompt.find("`search_results`"), std::string::npos);
    EXPECT_NE(prompt.find("class A(Entity): ..."), std::string::npos);
}

// --- instance query ----------------------------------------------------------

namespace {

/// Independent BFS: outgoing refs in slot order, then referrers by ascending id.
std::vector<std::string> bfs_oracle(const std::vector<KnowledgeObject>& all, const std::string& seed, int hops) {
    std::map<std::string, const KnowledgeObject*> by_id;
    for (const auto& o : all) by_id[o.id] = &o;
    std::vector<std::string> order{seed};
    std::set<std::string> seen{seed};
    std::deque<std::pair<std::string, int>> q{{seed, 0}};
    while (!q.empty()) {
        auto [id, d] = q.front();
        q.pop_front();
        if (d == hops) continue;
        std::vector<std::string> next;
        for (const auto& [slot, vals] : by_id[id]->slots) {
            for (const auto& v : vals) {
                if (v.kind == ValueKind::ref) next.push_back(v.text);
            }
        }
        std::set<std::string> referrers;
        for (const auto& o : all) {
            for (const auto& [slot, vals] : o.slots) {
                for (const auto& v : vals) {
                    if (v.kind == ValueKind::ref && v.text == id) referrers.insert(o.id);
                }
            }
        }
        next.insert(next.end(), referrers.begin(), referrers.end());
        for (const auto& n : next) {
            if (by_id.count(n) && seen.insert(n).second) {
                order.push_back(n);
                q.push_back({n, d + 1});
            }
        }
    }
    return order;
}

} // namespace

TEST(InstanceQuery, SeedAndTwoHopNeighborhood) {
    auto store = hinton_store();
    auto llm = mock_of({{"default_response", "- Geoffrey Hinton\n"}});
    auto r = instance_query("How many papers did Geoffrey Hinton write?", *store, *llm, 2);
    const auto& g = store->ontology();
    EXPECT_EQ(r.entities, (std::vector<std::string>{"Geoffrey Hinton"}));
    EXPECT_EQ(r.seeds, (std::vector<std::string>{id_of(g, "S.Person", "Geoffrey Hinton")}));
    std::vector<std::string> got;
    for (const auto& o : r.objects) got.push_back(o.id);
    EXPECT_EQ(got, bfs_oracle(store->objects(), r.seeds[0], 2));
    // Hop 1 reaches both papers; hop 2 adds Nature and Ilya; Turing stays out.
    EXPECT_EQ(std::set<std::string>(got.begin(), got.end()),
              (std::set<std::string>{id_of(g, "S.Person", "Geoffrey Hinton"), id_of(g, "S.Paper", "Backprop"),
                                     id_of(g, "S.Paper", "AlexNet"), id_of(g, "S.Venue", "Nature"),
                                     id_of(g, "S.Person", "Ilya")}));
}

TEST(InstanceQuery, FuzzyFallback) {
    auto store = hinton_store();
    auto llm = mock_of({{"default_response", "1. \"Hinton\""}});
    auto r = instance_query("Hinton's work", *store, *llm, 0);
    ASSERT_EQ(r.objects.size(), 1u);
    EXPECT_EQ(r.objects[0].display_name, "Geoffrey Hinton");
}

TEST(InstanceQuery, Errors) {
    auto store = hinton_store();
    auto none = mock_of({{"default_response", "\n  \n"}});
    position_of([&] { instance_query("q", *store, *none, 2); }, Errc::no_topic_entity);
    auto unknown = mock_of({{"default_response", "Marie Curie"}});
    try {
        instance_query("papers of Marie Curie", *store, *unknown, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::no_instances_found);
        EXPECT_NE(std::string(e.what()).find("papers of Marie Curie"), std::string::npos);
    }
}

// --- assembly and execution --------------------------------------------------

TEST(AssembleScript, OneClassOneObjectPrintsCount) {
    TempDir tmp;
    OntologyGraph g;
    g.add(entity("Person", "A person.", {attr("affiliation", "text")}));
    auto script = assemble_script({render_class_code(g, "S.Person")}, {obj(g, "S.Person", "Ada")},
                                  "print(len(search_results))", g);
    EXPECT_EQ(script, assemble_script({render_class_code(g, "S.Person")}, {obj(g, "S.Person", "Ada")},
                                      "print(len(search_results))", g));
    auto r = execute_script(script, {}, tmp.sub("w"));
    ASSERT_EQ(r.exit_status, ExitStatus::ok) << r.stderr_text << "\n" << script;
    EXPECT_EQ(r.stdout_text, "1\n");
}

TEST(AssembleScript, EmptyObjectsStillDeclareList) {
    OntologyGraph g;
    g.add(entity("Person", "A person.", {}));
    auto script = assemble_script({render_class_code(g, "S.Person")}, {}, "print(search_results)", g);
    EXPECT_NE(script.find("\nsearch_results = []\n"), std::string::npos);
    EXPECT_THROW(assemble_script({}, {}, "print(1)", g), Error);
}

TEST(AssembleScript, ClassClosureOrdersParentsFirst) {
    auto g = scholar();
    g.add(entity("Author", "An author.", {}, "Person"));
    auto a = obj(g, "S.Author", "Ada");
    EXPECT_EQ(class_closure(g, {"S.Paper"}, {a}), (std::vector<std::string>{"S.Person", "S.Paper", "S.Author"}));
}

TEST(AssembleScriptProperty, CountStubPrintsObjectCount) {
    TempDir tmp;
    auto g = scholar();
    std::mt19937 rng(99);
    for (int trial = 0; trial < 12; ++trial) {
        std::vector<KnowledgeObject> objs;
        const int n = static_cast<int>(rng() % 51);
        for (int i = 0; i < n; ++i) {
            if (rng() % 3 == 0 || objs.empty()) {
                objs.push_back(obj(g, "S.Person", "P" + std::to_string(i), {{"affiliation", {SlotValue::of_text("U\"" + std::to_string(rng() % 9))}}}));
            } else {
                std::vector<SlotValue> authors;
                for (int k = 0; k < 3; ++k) authors.push_back(SlotValue::of_ref(objs[rng() % objs.size()].id));
                // Refs to non-person objects are allowed by rendering; keep them to persons for realism.
                std::vector<SlotValue> person_refs;
                for (auto& v : authors) {
                    if (v.text.rfind("S.Person:", 0) == 0 &&
                        std::none_of(person_refs.begin(), person_refs.end(), [&](auto& p) { return p.text == v.text; })) {
                        person_refs.push_back(v);
                    }
                }
                std::map<std::string, std::vector<SlotValue>> slots{{"citation_count", {SlotValue::of_number(i * 1.5)}}};
                if (!person_refs.empty()) slots["authors"] = person_refs;
                objs.push_back(obj(g, "S.Paper", "Paper " + std::to_string(i), slots));
            }
        }
        std::vector<std::string> codes;
        for (const auto& c : class_closure(g, {"S.Paper"}, objs)) codes.push_back(render_class_code(g, c));
        auto script = assemble_script(codes, objs, "print(len(search_results))", g);
        auto r = execute_script(script, {}, tmp.sub("t" + std::to_string(trial)));
        ASSERT_EQ(r.exit_status, ExitStatus::ok) << r.stderr_text;
        EXPECT_EQ(r.stdout_text, std::to_string(objs.size()) + "\n");
    }
}

// --- evaluation --------------------------------------------------------------

TEST(Evaluate, ErrorShortCircuitsWithoutModel) {
    auto llm = mock_of({{"default_response", "PASS"}});
    ExecutionResult r;
    r.exit_status = ExitStatus::error;
    r.stderr_text = "Traceback...\nZeroDivisionError";
    auto v = evaluate_result("q", r, *llm);
    EXPECT_FALSE(v.pass);
    EXPECT_FALSE(v.judged);
    EXPECT_EQ(v.feedback, r.stderr_text);
    EXPECT_TRUE(llm->transcript().entries().empty());
}

TEST(Evaluate, PassAndUnparseable) {
    ExecutionResult ok;
    ok.exit_status = ExitStatus::ok;
    ok.stdout_text = "42\n";
    ok.produced_files = {{"chart.png", "chart", 10}};
    auto pass = mock_of({{"default_response", "PASS: chart present"}});
    auto v = evaluate_result("q", ok, *pass);
    EXPECT_TRUE(v.pass);
    EXPECT_EQ(v.feedback, "chart present");
    const auto prompt = pass->transcript().entries()[0]["messages"][0]["content"].get<std::string>();
    EXPECT_NE(prompt.find("Files: chart.png (chart)"), std::string::npos);

    auto fail = mock_of({{"default_response", "**FAIL** - axis labels missing"}});
    auto f = evaluate_result("q", ok, *fail);
    EXPECT_FALSE(f.pass);
    EXPECT_EQ(f.feedback, "axis labels missing");

    auto maybe = mock_of({{"default_response", "maybe"}});
    auto m = evaluate_result("q", ok, *maybe);
    EXPECT_FALSE(m.pass);
    EXPECT_TRUE(m.unparseable);
    EXPECT_EQ(m.feedback, "maybe");
}

// --- computation cycle -------------------------------------------------------

namespace {

json cycle_script(std::vector<std::string> code_responses, std::string judge = "PASS: answer printed") {
    return {{"rules",
             {{{"contains", "Extract the topic entities"}, {"response", "Geoffrey Hinton"}},
              {{"contains", "You review the result"}, {"response", judge}},
              {{"contains", "Query: How many papers did Geoffrey Hinton write?"}, {"responses", code_responses}}}},
            {"default_response", ""}};
}

const std::string kBadCode = "```python\nprint(search_results[99])\n```";
const std::string kGoodCode =
    "```python\nprint(sum(1 for o in search_results if type(o).__name__ == 'Paper'))\n```";

} // namespace

TEST(ComputationCycle, RetryAfterFailureThenPass) {
    TempDir tmp;
    auto store = hinton_store();
    auto llm = mock_of(cycle_script({kBadCode, kGoodCode}));
    ComputationConfig cfg;
    cfg.workdir = tmp.sub("cycle");
    auto t = run_computation_cycle("How many papers did Geoffrey Hinton write?", store->ontology(), *store, *llm, cfg);
    ASSERT_EQ(t.iterations.size(), 2u);
    EXPECT_EQ(t.final_status, CycleStatus::passed);
    EXPECT_EQ(t.iterations[0].execution->exit_status, ExitStatus::error);
    EXPECT_NE(t.iterations[0].feedback.find("IndexError"), std::string::npos);
    EXPECT_FALSE(t.iterations[0].pass);
    EXPECT_TRUE(t.iterations[1].pass);
    EXPECT_EQ(t.output(), "2\n");
    EXPECT_EQ(t.iterations[0].concepts, t.iterations[1].concepts);
    EXPECT_EQ(t.iterations[1].instance_count, 5u);
    // Iteration 2's prompt carried iteration 1's stderr.
    bool saw_feedback = false;
    for (const auto& e : llm->transcript().entries()) {
        const auto p = e["messages"][0]["content"].get<std::string>();
        if (p.find("Feedback on the previous attempt:\nTraceback") != std::string::npos) saw_feedback = true;
    }
    EXPECT_TRUE(saw_feedback);
    EXPECT_TRUE(fs::exists(cfg.workdir + "/iter_1.py"));
    auto j = computation_trace_to_json(t);
    EXPECT_EQ(j["final_status"], "passed");
    EXPECT_EQ(j["iterations"].size(), 2u);
    // One topic-entity call, two code calls, one judge call.
    EXPECT_EQ(llm->transcript().entries().size(), 4u);
}

TEST(ComputationCycle, ExhaustedAndFirstTryPass) {
    TempDir tmp;
    auto store = hinton_store();
    {
        auto llm = mock_of(cycle_script({kBadCode}));
        ComputationConfig cfg;
        cfg.max_iterations = 1;
        cfg.workdir = tmp.sub("a");
        auto t = run_computation_cycle("How many papers did Geoffrey Hinton write?", store->ontology(), *store, *llm, cfg);
        EXPECT_EQ(t.final_status, CycleStatus::exhausted);
        EXPECT_EQ(t.iterations.size(), 1u);
        EXPECT_EQ(t.output(), "");
    }
    {
        auto llm = mock_of(cycle_script({kGoodCode}));
        ComputationConfig cfg;
        cfg.workdir = tmp.sub("b");
        auto t = run_computation_cycle("How many papers did Geoffrey Hinton write?", store->ontology(), *store, *llm, cfg);
        EXPECT_EQ(t.final_status, CycleStatus::passed);
        EXPECT_EQ(t.iterations.size(), 1u);
    }
}

TEST(ComputationCycle, JudgeFailuresExhaustWithinLimit) {
    TempDir tmp;
    auto store = hinton_store();
    auto llm = mock_of(cycle_script({kGoodCode}, "FAIL: needs a chart"));
    ComputationConfig cfg;
    cfg.workdir = tmp.sub("c");
    auto t = run_computation_cycle("How many papers did Geoffrey Hinton write?", store->ontology(), *store, *llm, cfg);
    EXPECT_EQ(t.final_status, CycleStatus::exhausted);
    EXPECT_EQ(t.iterations.size(), 3u);
    EXPECT_EQ(t.iterations.back().feedback, "needs a chart");
}

TEST(ComputationCycle, FailuresTerminateWithReason) {
    TempDir tmp;
    auto store = hinton_store();
    auto llm = mock_of(cycle_script({kGoodCode}));
    ComputationConfig cfg;
    cfg.workdir = tmp.sub("d");
    auto t = run_computation_cycle("zzz qqq", store->ontology(), *store, *llm, cfg);
    EXPECT_EQ(t.final_status, CycleStatus::failed);
    EXPECT_EQ(t.iterations.size(), 1u);
    EXPECT_NE(t.reason.find("NoConceptFound"), std::string::npos);

    auto nobody = mock_of({{"rules", {{{"contains", "Extract the topic"}, {"response", "Nobody"}}}},
                           {"default_response", kGoodCode}});
    cfg.workdir = tmp.sub("e");
    auto t2 = run_computation_cycle("How many papers?", store->ontology(), *store, *nobody, cfg);
    EXPECT_EQ(t2.final_status, CycleStatus::failed);
    EXPECT_NE(t2.reason.find("NoInstancesFound"), std::string::npos);
}

TEST(ComputationCycle, ChartArtifactsOnPass) {
    TempDir tmp;
    auto store = hinton_store();
    auto llm = mock_of(cycle_script(
        {"```python\nopen('chart.png', 'wb').write(b'png')\nprint(len(search_results))\n```"}));
    ComputationConfig cfg;
    cfg.workdir = tmp.sub("f");
    auto t = run_computation_cycle("How many papers did Geoffrey Hinton write?", store->ontology(), *store, *llm, cfg);
    ASSERT_EQ(t.final_status, CycleStatus::passed);
    ASSERT_EQ(t.artifacts.size(), 1u);
    EXPECT_TRUE(fs::exists(t.artifacts[0]));
    EXPECT_EQ(fs::path(t.artifacts[0]).filename(), "chart.png");
}

// --- text cycle ----------------------------------------------------------------

namespace {

void write_corpus(const std::string& dir) {
    fs::create_directories(dir);
    text::write_file(dir + "/a.json",
                     json{{"title", "Turing Award 2018"}, {"url", "https://example.org/turing"},
                          {"body", "Hinton received the Turing Award in 2018 for deep learning."}}
                         .dump());
    text::write_file(dir + "/b.json",
                     json::array({{{"title", "Cooking"}, {"url", "https://example.org/food"},
                                   {"body", "Recipes for bread."}}})
                         .dump());
}

json text_script(std::vector<std::string> checks) {
    return {{"rules",
             {{{"contains", "Summarize the information"}, {"response", "Hinton won the 2018 Turing Award."}},
              {{"contains", "enough information"}, {"responses", checks}},
              {{"contains", "Write a concise"}, {"response", "Hinton won the Turing Award in 2018 [1]."}}}},
            {"default_response", ""}};
}

} // namespace

TEST(TextCycle, OneRelevantDocument) {
    TempDir tmp;
    write_corpus(tmp.sub("corpus"));
    FixtureSearchBackend search(tmp.sub("corpus"));
    EXPECT_EQ(search.size(), 2u);
    auto llm = mock_of(text_script({"SUFFICIENT"}));
    auto r = run_text_cycle("Hinton Turing Award", search, *llm, {});
    EXPECT_EQ(r.text, "Hinton won the Turing Award in 2018 [1].");
    ASSERT_EQ(r.sources.size(), 1u);
    EXPECT_EQ(r.sources[0], (Source{"Turing Award 2018", "https://example.org/turing"}));
    EXPECT_TRUE(r.sufficient);
    EXPECT_EQ(r.rounds, 1);
    EXPECT_FALSE(r.reason);
}

TEST(TextCycle, TwoFailedChecksThenPass) {
    TempDir tmp;
    write_corpus(tmp.sub("corpus"));
    FixtureSearchBackend search(tmp.sub("corpus"));
    auto llm = mock_of(text_script({"INSUFFICIENT: year", "INSUFFICIENT: field", "SUFFICIENT"}));
    auto r = run_text_cycle("Hinton Turing Award", search, *llm, {});
    EXPECT_EQ(r.rounds, 3);
    EXPECT_TRUE(r.sufficient);
    EXPECT_EQ(r.sources.size(), 1u);
}

TEST(TextCycle, RoundsExhaustedIsFlagged) {
    TempDir tmp;
    write_corpus(tmp.sub("corpus"));
    FixtureSearchBackend search(tmp.sub("corpus"));
    auto llm = mock_of(text_script({"INSUFFICIENT: everything"}));
    TextCycleConfig cfg;
    cfg.max_rounds = 2;
    auto r = run_text_cycle("Hinton Turing Award", search, *llm, cfg);
    EXPECT_EQ(r.rounds, 2);
    EXPECT_FALSE(r.sufficient);
    EXPECT_FALSE(r.text.empty());
    ASSERT_TRUE(r.reason);
    EXPECT_NE(r.reason->find("insufficient"), std::string::npos);
}

TEST(TextCycle, EmptyCorpusGivesReason) {
    TempDir tmp;
    fs::create_directories(tmp.sub("empty"));
    FixtureSearchBackend search(tmp.sub("empty"));
    auto llm = mock_of(text_script({"SUFFICIENT"}));
    auto r = run_text_cycle("anything", search, *llm, {});
    EXPECT_TRUE(r.text.empty());
    ASSERT_TRUE(r.reason);
    EXPECT_NE(r.reason->find("EmptyCorpus"), std::string::npos);
    EXPECT_TRUE(llm->transcript().entries().empty());
}

// --- merge and revise ----------------------------------------------------------

namespace {

ComputationTrace passed_trace(const std::string& query, const std::string& out) {
    ComputationTrace t;
    t.query = query;
    t.final_status = CycleStatus::passed;
    IterationRecord rec;
    rec.index = 1;
    ExecutionResult e;
    e.exit_status = ExitStatus::ok;
    e.stdout_text = out;
    rec.execution = e;
    rec.pass = true;
    t.iterations.push_back(rec);
    return t;
}

} // namespace

TEST(Merge, TextOnlySectionIsTheText) {
    auto llm = mock_of({{"default_response", "should not be used"}});
    TextResult tr;
    tr.text = "Written.";
    EXPECT_EQ(merge_section({"S", {}, {tr}}, *llm), "Written.");
    EXPECT_TRUE(llm->transcript().entries().empty());
    EXPECT_THROW(merge_section({"S", {}, {}}, *llm), Error);
}

TEST(Merge, ModelOutputReturnedVerbatim) {
    auto llm = mock_of({{"default_response", "Merged body."}});
    TextResult tr;
    tr.text = "Written.";
    EXPECT_EQ(merge_section({"S", {passed_trace("q", "7\n")}, {tr}}, *llm), "Merged body.");
}

TEST(Merge, ComputedResultWinsConflicts) {
    auto llm = mock_of({{"rules",
                         {{{"contains", {"prefer the computed results", "Output:\n12", "published 10 papers"}},
                           {"response", "Hinton published 12 papers."}}}},
                        {"default_response", "Hinton published 10 papers."}});
    TextResult tr;
    tr.text = "Sources say Hinton published 10 papers.";
    auto merged = merge_section({"Output", {passed_trace("paper count", "12\n")}, {tr}}, *llm);
    EXPECT_NE(merged.find("12"), std::string::npos);
}

TEST(Revise, KeepsStructureOrFallsBack) {
    std::vector<SectionBody> sections{{"A", "alpha"}, {"B", "beta"}};
    auto good = mock_of({{"default_response", "# Title\n\n## A\n\nAlpha polished.\n\n## B\n\nBeta polished.\n"}});
    EXPECT_EQ(revise_report("Title", sections, *good),
              (std::vector<SectionBody>{{"A", "Alpha polished."}, {"B", "Beta polished."}}));
    auto bad = mock_of({{"default_response", "## Only one\n\ntext"}});
    Diagnostics issues;
    EXPECT_EQ(revise_report("Title", sections, *bad, &issues), sections);
    EXPECT_EQ(issues.size(), 1u);
}
