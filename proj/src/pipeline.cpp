// SPDX-License-Identifier: Apache-2.0
#include "kdr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <ctime>
#include <filesystem>
#include <map>
#include <regex>
#include <set>

#include "kdr/alignment.hpp"
#include "kdr/extraction.hpp"
#include "kdr/templates.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kdr {

// ---------------------------------------------------------------------------
// Tasks

void validate_task(const ResearchTask& task) {
    if (text::trim(task.topic).empty()) throw Error(Errc::precondition, "task topic is empty");
    if (task.kb_path.empty()) throw Error(Errc::precondition, "task needs a knowledge base path");
    if (task.mode == TaskMode::organize && task.corpus_path.empty()) {
        throw Error(Errc::precondition, "organize task needs a corpus path");
    }
    if (task.mode == TaskMode::research && task.output_path.empty()) {
        throw Error(Errc::precondition, "research task needs an output path");
    }
}

std::string run_id(const ResearchTask& task) {
    const std::string mode = task.mode == TaskMode::organize ? "organize" : "research";
    return mode + "-" + text::hex64(text::fnv1a64(text::trim(task.topic))).substr(0, 10);
}

// ---------------------------------------------------------------------------
// Ontology proposal and review

std::string_view proposal_status_name(ProposalStatus s) noexcept {
    switch (s) {
    case ProposalStatus::proposed: return "proposed";
    case ProposalStatus::approved: return "approved";
    case ProposalStatus::edited: return "edited";
    }
    return "proposed";
}

ProposalStatus parse_proposal_status(std::string_view s) {
    if (s == "proposed") return ProposalStatus::proposed;
    if (s == "approved") return ProposalStatus::approved;
    if (s == "edited") return ProposalStatus::edited;
    throw Error(Errc::schema_violation, "unknown proposal status '" + std::string(s) + "'");
}

namespace {

/// Validated concepts of an ontology document, parents before children.
std::vector<Concept> concepts_of(const json& doc) {
    const OntologyGraph g = ontology_from_json(doc);
    std::vector<Concept> out;
    for (const auto& name : g.order()) out.push_back(g.at(name));
    return out;
}

} // namespace

json proposal_ontology_json(const ProposedOntology& p) {
    json spaces = json::object();
    for (const auto& c : p.concepts) {
        if (!spaces.contains(c.ns)) spaces[c.ns] = json::array();
        spaces[c.ns].push_back(concept_to_json(c));
    }
    return json{{"namespaces", spaces}};
}

ordered_json proposal_to_json(const ProposedOntology& p) {
    ordered_json j;
    j["topic"] = p.topic;
    j["status"] = proposal_status_name(p.status);
    j["reviewer_note"] = p.reviewer_note;
    j["ontology"] = proposal_ontology_json(p);
    return j;
}

ProposedOntology proposal_from_json(const json& j) {
    ProposedOntology p;
    try {
        p.topic = j.at("topic").get<std::string>();
        p.status = parse_proposal_status(j.at("status").get<std::string>());
        p.reviewer_note = j.value("reviewer_note", std::string{});
        p.concepts = concepts_of(j.at("ontology"));
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, std::string("proposal: ") + e.what());
    }
    return p;
}

void save_proposal(const ProposedOntology& p, const std::string& path) {
    text::write_file(path, proposal_to_json(p).dump(2) + "\n");
}

ProposedOntology load_proposal(const std::string& path) {
    json j;
    try {
        j = json::parse(text::read_file(path));
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, path + ": " + e.what());
    }
    return proposal_from_json(j);
}

std::vector<Concept> parse_proposal_response(std::string_view response) {
    std::vector<Concept> concepts;
    try {
        concepts = concepts_of(json::parse(text::extract_code_block(response)));
    } catch (const json::exception& e) {
        throw Error(Errc::unparseable_proposal, e.what());
    } catch (const Error& e) {
        throw Error(Errc::unparseable_proposal, e.what());
    }
    if (concepts.empty()) throw Error(Errc::unparseable_proposal, "proposal names no concepts");
    return concepts;
}

ProposedOntology propose_ontology(const std::string& topic, LlmGateway& llm, const std::string& proposal_path,
                                  const std::string& ns) {
    if (text::trim(topic).empty()) throw Error(Errc::precondition, "topic is empty");
    const std::string prompt =
        templates::substitute(templates::kProposeOntology, "namespace", ns) + "\n\nResearch topic: " + topic;
    const std::string response = llm.ask(prompt);
    ProposedOntology p;
    p.topic = topic;
    try {
        p.concepts = parse_proposal_response(response);
    } catch (const Error&) {
        text::write_file(proposal_path + ".raw.txt", response);
        throw;
    }
    save_proposal(p, proposal_path);
    return p;
}

ProposedOntology review_gate(const std::string& proposal_path, const ReviewDecision& decision) {
    if (!fs::exists(proposal_path)) throw Error(Errc::io_failure, "no proposal at " + proposal_path);
    ProposedOntology p = load_proposal(proposal_path);
    if (decision.edited_path) {
        try {
            p.concepts = concepts_of(json::parse(text::read_file(*decision.edited_path)));
        } catch (const json::exception& e) {
            throw Error(Errc::schema_violation, *decision.edited_path + ": " + e.what());
        } catch (const Error& e) {
            if (e.code() == Errc::io_failure) throw;
            throw Error(Errc::schema_violation, *decision.edited_path + ": " + e.what());
        }
        if (p.concepts.empty()) throw Error(Errc::schema_violation, *decision.edited_path + ": no concepts");
        p.status = ProposalStatus::edited;
    } else if (decision.approve) {
        if (p.status == ProposalStatus::proposed) p.status = ProposalStatus::approved;
    } else {
        throw Error(Errc::not_approved, "proposal was neither approved nor edited");
    }
    p.reviewer_note = decision.note;
    save_proposal(p, proposal_path);
    return p;
}

// ---------------------------------------------------------------------------
// Knowledge base files

std::string ontology_sidecar_path(const std::string& kb_path) { return kb_path + ".ontology.json"; }

std::unique_ptr<KnowledgeStore> load_kb(const std::string& kb_path, Clock clock, bool allow_missing) {
    const std::string sidecar = ontology_sidecar_path(kb_path);
    if (!fs::exists(kb_path)) {
        if (!allow_missing) throw Error(Errc::io_failure, "no knowledge base at " + kb_path);
        OntologyGraph g = fs::exists(sidecar) ? load_ontology(sidecar) : OntologyGraph{};
        return std::make_unique<KnowledgeStore>(std::move(g), std::move(clock));
    }
    if (!fs::exists(sidecar)) throw Error(Errc::io_failure, "missing ontology file " + sidecar);
    return KnowledgeStore::load(kb_path, load_ontology(sidecar), std::move(clock));
}

void save_kb(const KnowledgeStore& store, const std::string& kb_path) {
    const auto parent = fs::path(kb_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    save_ontology(store.ontology(), ontology_sidecar_path(kb_path));
    store.save(kb_path);
}

Clock logical_clock(Timestamp start) {
    auto next = std::make_shared<std::atomic<Timestamp>>(start);
    return [next] { return next->fetch_add(1); };
}

// ---------------------------------------------------------------------------
// Corpus

std::string html_to_text(std::string_view html) {
    static const std::regex hidden(R"(<(script|style|head)\b[^>]*>[\s\S]*?</\1\s*>)", std::regex::icase);
    static const std::regex block(R"(<\s*(br|/?p|/?div|/?h[1-6]|/?li|/?ul|/?ol|/?tr|/?table|/?section|/?article)\b[^>]*>)",
                                  std::regex::icase);
    static const std::regex tag(R"(<[^>]*>)");
    std::string s = std::regex_replace(std::string(html), hidden, " ");
    s = std::regex_replace(s, block, "\n\n");
    s = std::regex_replace(s, tag, " ");
    static const std::vector<std::pair<std::string, std::string>> entities{
        {"&nbsp;", " "}, {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&apos;", "'"}, {"&amp;", "&"}};
    for (const auto& [from, to] : entities) {
        std::size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
        }
    }
    return s;
}

std::vector<std::string> split_passages(std::string_view input, std::size_t max_words) {
    if (max_words == 0) throw Error(Errc::precondition, "max_words must be positive");
    // Paragraphs are separated by blank lines.
    std::vector<std::vector<std::string>> paragraphs;
    std::vector<std::string> current;
    for (const auto& line : text::split_lines(input)) {
        const std::string trimmed = text::trim(line);
        if (trimmed.empty()) {
            if (!current.empty()) paragraphs.push_back(std::move(current));
            current.clear();
            continue;
        }
        for (const auto& w : text::split(text::collapse_whitespace(trimmed), ' ')) {
            if (!w.empty()) current.push_back(w);
        }
    }
    if (!current.empty()) paragraphs.push_back(std::move(current));

    std::vector<std::string> out;
    std::vector<std::string> parts;
    std::size_t words = 0;
    auto flush = [&] {
        if (!parts.empty()) out.push_back(text::join(parts, "\n\n"));
        parts.clear();
        words = 0;
    };
    for (const auto& para : paragraphs) {
        if (para.size() > max_words) {
            flush();
            for (std::size_t i = 0; i < para.size(); i += max_words) {
                const auto end = std::min(para.size(), i + max_words);
                out.push_back(text::join(std::vector<std::string>(para.begin() + i, para.begin() + end), " "));
            }
            continue;
        }
        if (words + para.size() > max_words) flush();
        parts.push_back(text::join(para, " "));
        words += para.size();
    }
    flush();
    return out;
}

std::vector<Document> load_corpus(const std::string& dir, std::size_t max_words) {
    if (!fs::is_directory(dir)) throw Error(Errc::io_failure, "corpus is not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = text::to_lower(entry.path().extension().string());
        if (ext == ".txt" || ext == ".md" || ext == ".html" || ext == ".htm") files.push_back(entry.path());
    }
    std::vector<Document> docs;
    for (const auto& f : files) {
        Document d;
        d.id = fs::relative(f, dir).generic_string();
        std::string content = text::read_file(f.string());
        const auto ext = text::to_lower(f.extension().string());
        if (ext == ".html" || ext == ".htm") content = html_to_text(content);
        int i = 0;
        for (auto& p : split_passages(content, max_words)) d.passages.push_back({d.id, i++, std::move(p)});
        docs.push_back(std::move(d));
    }
    std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
    return docs;
}

// ---------------------------------------------------------------------------
// Organization phase

ordered_json manifest_to_json(const OrganizationManifest& m) {
    ordered_json j;
    j["topic"] = m.topic;
    j["documents"] = m.documents;
    j["passages"] = m.passages;
    j["concepts_aligned"] = m.concepts_aligned;
    j["objects_extracted"] = m.objects_extracted;
    j["objects_ingested"] = m.objects_ingested;
    j["store_objects"] = m.store_objects;
    j["errors"] = ordered_json::array();
    for (const auto& e : m.errors) j["errors"].push_back({{"document", e.document}, {"error", e.error}});
    return j;
}

namespace {

/// Inserts the proposal into `graph`. Ref-typed attributes are held back until
/// every proposed concept is placed, so proposals may reference each other.
std::size_t integrate_proposal(const ProposedOntology& proposal, OntologyGraph& graph, LlmGateway& llm,
                               std::size_t k) {
    std::optional<EmbeddingIndex> index;
    std::vector<Concept> placed;
    for (const auto& c : proposal.concepts) {
        if (graph.contains(c.qualified())) continue;
        Concept stripped = c;
        stripped.attributes.clear();
        stripped.equivalents.clear();
        for (const auto& a : c.attributes) {
            if (a.type.scalar != ScalarType::ref) stripped.attributes.push_back(a);
        }
        std::optional<std::string> declared;
        if (!c.parent.empty() && !is_root_name(c.parent)) declared = graph.resolve(c.parent, c.ns);
        if (declared) {
            stripped.parent = *declared;
            graph.add(stripped);
            if (index) (*index)[stripped.qualified()] = llm.embed({embedding_text(stripped)}).front();
        } else {
            if (!index) index = embed_ontology(graph, llm);
            stripped.parent.clear();
            graph = align_concept(stripped, graph, llm, k, &*index).graph;
        }
        Concept full = c;
        full.parent = graph.at(c.qualified()).parent;
        placed.push_back(std::move(full));
    }
    for (const auto& c : placed) {
        for (const auto& a : c.attributes) {
            if (a.type.scalar != ScalarType::ref) continue;
            if (auto target = graph.resolve(a.type.ref, c.ns)) {
                const auto target_ns = graph.at(*target).ns;
                if (target_ns != c.ns) graph.add_dependency(c.ns, target_ns);
            }
        }
        auto merged = c;
        // Keep any equivalence alignment added.
        for (const auto& e : graph.at(c.qualified()).equivalents) {
            if (std::find(merged.equivalents.begin(), merged.equivalents.end(), e) == merged.equivalents.end()) {
                merged.equivalents.push_back(e);
            }
        }
        graph.replace(std::move(merged));
    }
    return placed.size();
}

} // namespace

OrganizationManifest run_organization(const ProposedOntology& proposal, const std::vector<Document>& corpus,
                                      KnowledgeStore& store, LlmGateway& llm, const OrganizationConfig& cfg) {
    if (proposal.status == ProposalStatus::proposed) {
        throw Error(Errc::not_approved, "the ontology proposal has not been reviewed");
    }
    OrganizationManifest m;
    m.topic = proposal.topic;
    m.documents = corpus.size();

    OntologyGraph graph = store.ontology();
    m.concepts_aligned = integrate_proposal(proposal, graph, llm, cfg.candidate_count);
    store.set_ontology(graph);

    // One extraction subtask per namespace, in first-seen order.
    std::vector<std::pair<std::string, std::vector<std::string>>> subtasks;
    for (const auto& c : proposal.concepts) {
        auto it = std::find_if(subtasks.begin(), subtasks.end(), [&](const auto& s) { return s.first == c.ns; });
        if (it == subtasks.end()) {
            subtasks.push_back({c.ns, {}});
            it = std::prev(subtasks.end());
        }
        it->second.push_back(c.name);
    }

    for (const auto& doc : corpus) {
        m.passages += doc.passages.size();
        std::vector<KnowledgeObject> found;
        try {
            for (const auto& [ns, types] : subtasks) {
                for (const auto& p : doc.passages) {
                    ExtractionRequest req;
                    req.text = p.text;
                    req.ns = ns;
                    req.mode = ExtractionMode::closed;
                    req.allowed_types = types;
                    req.source_id = doc.id + "#" + std::to_string(p.index);
                    auto r = extract(req, graph, llm);
                    if (r.reason) m.errors.push_back({doc.id, "passage " + std::to_string(p.index) + ": " + *r.reason});
                    for (auto& o : r.objects) found.push_back(std::move(o));
                }
            }
        } catch (const Error& e) {
            m.errors.push_back({doc.id, e.what()});
            continue;
        }
        m.objects_extracted += found.size();
        for (auto& o : found) {
            try {
                store.ingest(std::move(o));
                ++m.objects_ingested;
            } catch (const Error& e) {
                m.errors.push_back({doc.id, e.what()});
            }
        }
    }
    store.settle();
    m.store_objects = store.size();

    if (!cfg.run_dir.empty()) {
        fs::create_directories(cfg.run_dir);
        text::write_file((fs::path(cfg.run_dir) / "manifest.json").string(), manifest_to_json(m).dump(2) + "\n");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Research phase

std::string render_plan_prompt(const std::string& topic, const OntologyGraph& graph) {
    std::vector<std::string> names;
    for (const auto& n : graph.order()) names.push_back(graph.at(n).name);
    std::string prompt(templates::kPlan);
    prompt += "\n\nConcepts in the knowledge base: " + (names.empty() ? std::string("(none)") : text::join(names, ", "));
    prompt += "\n\nResearch task: " + topic;
    return prompt;
}

std::string computation_caveat(const std::string& query, const std::string& reason) {
    std::string r = text::collapse_whitespace(reason);
    if (r.size() > 300) r = r.substr(0, 300) + "...";
    return "> **Caveat:** the analysis \"" + query + "\" did not produce a verified result (" + r +
           "); this part relies on written sources only.";
}

namespace {

std::string text_caveat(const std::string& query, const std::string& reason) {
    return "> **Caveat:** web research for \"" + query + "\" was incomplete (" + text::collapse_whitespace(reason) +
           ").";
}

std::vector<Source> dedupe_sources(const std::vector<Source>& in) {
    std::set<std::string> seen;
    std::vector<Source> out;
    for (const auto& s : in) {
        if (seen.insert(s.url.empty() ? "title:" + s.title : s.url).second) out.push_back(s);
    }
    return out;
}

std::string failure_reason(const ComputationTrace& t) {
    if (t.final_status == CycleStatus::exhausted && !t.iterations.empty() && !t.iterations.back().feedback.empty()) {
        return "exhausted after " + std::to_string(t.iterations.size()) + " iterations: " + t.iterations.back().feedback;
    }
    return t.reason.empty() ? std::string(cycle_status_name(t.final_status)) : t.reason;
}

std::string store_fingerprint(const KnowledgeStore& store) {
    std::uint64_t h = text::fnv1a64(ontology_to_json(store.ontology()).dump());
    for (const auto& o : store.objects()) h ^= text::fnv1a64(object_to_json(o).dump()) + 0x9e3779b97f4a7c15ULL + (h << 6);
    return text::hex64(h);
}

struct SectionResult {
    std::string body;
    std::vector<std::string> caveats;
    std::vector<std::string> artifacts;
    std::vector<Source> sources;
};

ordered_json section_to_json(const std::string& key, const CyclePlan& plan, const SectionResult& r,
                             const std::vector<ComputationTrace>& comps, const std::vector<TextResult>& texts) {
    ordered_json j;
    j["key"] = key;
    j["title"] = plan.section_title;
    j["requests"] = ordered_json::array();
    for (const auto& q : plan.requests) j["requests"].push_back({{"kind", request_kind_name(q.kind)}, {"query", q.query}});
    j["computations"] = ordered_json::array();
    for (const auto& c : comps) j["computations"].push_back(computation_trace_to_json(c));
    j["texts"] = ordered_json::array();
    for (const auto& t : texts) j["texts"].push_back(text_result_to_json(t));
    j["body"] = r.body;
    j["caveats"] = r.caveats;
    j["artifacts"] = r.artifacts;
    j["sources"] = ordered_json::array();
    for (const auto& s : r.sources) j["sources"].push_back({{"title", s.title}, {"url", s.url}});
    return j;
}

std::optional<SectionResult> cached_section(const fs::path& trace_path, const std::string& key) {
    if (!fs::exists(trace_path)) return std::nullopt;
    try {
        const json j = json::parse(text::read_file(trace_path.string()));
        if (j.at("key").get<std::string>() != key) return std::nullopt;
        SectionResult r;
        r.body = j.at("body").get<std::string>();
        r.caveats = j.at("caveats").get<std::vector<std::string>>();
        r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
        for (const auto& s : j.at("sources")) r.sources.push_back({s.at("title"), s.at("url")});
        for (const auto& a : r.artifacts) {
            if (!fs::exists(a)) return std::nullopt;
        }
        return r;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

TextResult text_or_reason(const std::string& query, SearchBackend* search, LlmGateway& llm,
                          const TextCycleConfig& cfg) {
    if (search) return run_text_cycle(query, *search, llm, cfg);
    TextResult r;
    r.query = query;
    r.reason = "no search backend configured";
    return r;
}

SectionResult run_section(const CyclePlan& plan, const fs::path& dir, const KnowledgeStore& store, LlmGateway& llm,
                          SearchBackend* search, const ResearchConfig& cfg, std::vector<ComputationTrace>& comps,
                          std::vector<TextResult>& texts) {
    SectionResult r;
    std::vector<ComputationTrace> passed;
    int cycle = 0;
    for (const auto& req : plan.requests) {
        ++cycle;
        if (req.kind == RequestKind::data_analysis) {
            ComputationConfig cc = cfg.computation;
            cc.workdir = (dir / ("cycle_" + std::to_string(cycle))).string();
            auto t = run_computation_cycle(req.query, store.ontology(), store, llm, cc);
            comps.push_back(t);
            if (t.final_status == CycleStatus::passed) {
                passed.push_back(t);
                for (const auto& a : t.artifacts) r.artifacts.push_back(a);
            } else {
                r.caveats.push_back(computation_caveat(req.query, failure_reason(t)));
                auto fallback = text_or_reason(req.query, search, llm, cfg.text);
                if (fallback.reason && fallback.text.empty()) {
                    r.caveats.push_back(text_caveat(req.query, *fallback.reason));
                }
                texts.push_back(std::move(fallback));
            }
        } else {
            auto t = text_or_reason(req.query, search, llm, cfg.text);
            if (t.reason) r.caveats.push_back(text_caveat(req.query, *t.reason));
            texts.push_back(std::move(t));
        }
    }
    std::vector<TextResult> usable;
    for (const auto& t : texts) {
        if (t.text.empty()) continue;
        usable.push_back(t);
        for (const auto& s : t.sources) r.sources.push_back(s);
    }
    if (!passed.empty() || !usable.empty()) {
        r.body = merge_section({plan.section_title, passed, usable}, llm);
    }
    return r;
}

} // namespace

ReportDocument run_research(const std::string& topic, const KnowledgeStore& store, LlmGateway& llm,
                            SearchBackend* search, const ResearchConfig& cfg) {
    if (text::trim(topic).empty()) throw Error(Errc::precondition, "topic is empty");
    if (cfg.run_dir.empty()) throw Error(Errc::precondition, "research needs a run directory");
    const fs::path run(cfg.run_dir);
    fs::create_directories(run);

    const std::string plan_text = llm.ask(render_plan_prompt(topic, store.ontology()));
    text::write_file((run / "plan.txt").string(), plan_text);
    const auto plans = parse_decomposition(plan_text);
    if (plans.empty()) throw Error(Errc::empty_plan, "the plan contains no requests");

    const std::string fingerprint = store_fingerprint(store);
    std::vector<SectionResult> results;
    for (std::size_t n = 0; n < plans.size(); ++n) {
        const auto& plan = plans[n];
        const fs::path dir = run / "sections" / std::to_string(n + 1);
        const std::string key =
            text::hex64(text::fnv1a64(plan.section_title + "\n" + render_decomposition({plan}) + fingerprint));
        if (auto cached = cached_section(dir / "trace.json", key)) {
            results.push_back(std::move(*cached));
            continue;
        }
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::vector<ComputationTrace> comps;
        std::vector<TextResult> texts;
        auto r = run_section(plan, dir, store, llm, search, cfg, comps, texts);
        text::write_file((dir / "trace.json").string(), section_to_json(key, plan, r, comps, texts).dump(2) + "\n");
        results.push_back(std::move(r));
    }

    std::vector<SectionBody> bodies;
    for (std::size_t n = 0; n < plans.size(); ++n) bodies.push_back({plans[n].section_title, results[n].body});
    Diagnostics issues;
    bodies = revise_report(topic, bodies, llm, &issues);

    ReportDocument doc;
    doc.title = topic;
    doc.generated_at = cfg.clock ? cfg.clock() : system_clock_ms();
    for (std::size_t n = 0; n < plans.size(); ++n) {
        ReportSection s;
        s.title = plans[n].section_title;
        std::vector<std::string> parts;
        if (!text::trim(bodies[n].body).empty()) parts.push_back(text::trim(bodies[n].body));
        for (const auto& c : results[n].caveats) parts.push_back(c);
        s.body = parts.empty() ? "_No material was found for this section._" : text::join(parts, "\n\n");
        s.artifacts = results[n].artifacts;
        doc.sections.push_back(std::move(s));
        doc.sources.insert(doc.sources.end(), results[n].sources.begin(), results[n].sources.end());
    }
    doc.sources = dedupe_sources(doc.sources);
    return doc;
}

namespace {

std::string iso8601(Timestamp ms) {
    const std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Published file names, one list per section.
std::vector<std::vector<std::string>> published_names(const ReportDocument& doc) {
    std::vector<std::vector<std::string>> out;
    std::set<std::string> used;
    for (std::size_t n = 0; n < doc.sections.size(); ++n) {
        std::vector<std::string> names;
        for (const auto& a : doc.sections[n].artifacts) {
            const std::string base = "s" + std::to_string(n + 1) + "-" + fs::path(a).filename().string();
            std::string name = base;
            for (int i = 2; !used.insert(name).second; ++i) name = std::to_string(i) + "-" + base;
            names.push_back(name);
        }
        out.push_back(std::move(names));
    }
    return out;
}

} // namespace

std::string render_report_markdown(const ReportDocument& doc) {
    const auto names = published_names(doc);
    std::string md = "# " + doc.title + "\n\nGenerated: " + iso8601(doc.generated_at) + "\n";
    for (std::size_t n = 0; n < doc.sections.size(); ++n) {
        const auto& s = doc.sections[n];
        md += "\n## " + s.title + "\n\n" + text::trim(s.body) + "\n";
        for (std::size_t i = 0; i < s.artifacts.size(); ++i) {
            const auto& name = names[n][i];
            const std::string label = fs::path(s.artifacts[i]).filename().string();
            const bool chart = guess_file_kind(label) == "chart";
            md += "\n" + std::string(chart ? "!" : "") + "[" + label + "](artifacts/" + name + ")\n";
        }
    }
    md += "\n## Sources\n\n";
    const auto sources = dedupe_sources(doc.sources);
    if (sources.empty()) md += "_No external sources._\n";
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& src = sources[i];
        md += std::to_string(i + 1) + ". " + (src.url.empty() ? src.title : "[" + src.title + "](" + src.url + ")") + "\n";
    }
    return md;
}

std::string assemble_report(const ReportDocument& doc, const std::string& out_dir) {
    if (doc.sections.empty()) throw Error(Errc::precondition, "report has no sections");
    for (const auto& s : doc.sections) {
        for (const auto& a : s.artifacts) {
            if (!fs::is_regular_file(a)) throw Error(Errc::dangling_artifact, "artifact not found: " + a);
        }
    }
    const auto names = published_names(doc);
    const fs::path out(out_dir);
    try {
        fs::create_directories(out / "artifacts");
        for (std::size_t n = 0; n < doc.sections.size(); ++n) {
            for (std::size_t i = 0; i < doc.sections[n].artifacts.size(); ++i) {
                fs::copy_file(doc.sections[n].artifacts[i], out / "artifacts" / names[n][i],
                              fs::copy_options::overwrite_existing);
            }
        }
    } catch (const fs::filesystem_error& e) {
        throw Error(Errc::io_failure, e.what());
    }
    const std::string path = (out / "report.md").string();
    text::write_file(path, render_report_markdown(doc));
    return path;
}

} // namespace kdr
