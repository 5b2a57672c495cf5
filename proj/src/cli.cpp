// SPDX-License-Identifier: Apache-2.0
#include "kdr/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <istream>
#include <ostream>
#include <sstream>

#include "kdr/alignment.hpp"
#include "kdr/config.hpp"
#include "kdr/evalkit.hpp"
#include "kdr/extraction.hpp"
#include "kdr/pipeline.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kdr {

namespace {

constexpr std::string_view kDefaultRubric =
    "You are grading a research report on a scale from 1 (poor) to 10 (excellent).\n"
    "completeness: the report covers every part of the research task.\n"
    "thoroughness: claims are developed with supporting detail and evidence.\n"
    "factuality: statements agree with the cited sources and computed results.\n"
    "coherence: sections follow a logical order and read as one document.\n"
    "insight: the report draws conclusions that go beyond restating facts.";

struct Globals {
    std::optional<std::string> config_path;
    std::optional<std::string> mock;
    std::optional<std::string> transcript;
    bool pretty = false;
};

/// Carries state shared by the command handlers.
struct Context {
    Globals g;
    Config cfg;
    std::istream& in;
    std::ostream& out;
    std::ostream& err;

    Clock clock() const { return g.mock ? logical_clock() : Clock(system_clock_ms); }
    std::shared_ptr<LlmGateway> gateway() const { return make_gateway(cfg, g.mock); }

    void emit(const ordered_json& j) const {
        if (g.pretty) {
            out << render_pretty(j);
        } else {
            out << j.dump(2) << "\n";
        }
    }
};

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) throw Error(Errc::io_failure, std::string(what) + " is not a directory: " + path);
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw Error(Errc::io_failure, std::string(what) + " not found: " + path);
}

std::unique_ptr<KnowledgeStore> open_kb(const Context& ctx, const std::string& path, bool allow_missing) {
    auto store = load_kb(path, ctx.clock(), allow_missing);
    if (!ctx.cfg.search.fulltext_endpoint.empty()) {
        store->set_external_search(std::make_shared<ExternalSearch>(ctx.cfg.search.fulltext_endpoint));
    }
    return store;
}

/// Concepts of an ontology file without resolving parents.
std::vector<Concept> read_concepts(const std::string& path) {
    require_file(path, "ontology file");
    std::vector<Concept> out;
    try {
        const auto j = json::parse(text::read_file(path));
        for (const auto& [ns, items] : j.at("namespaces").items()) {
            for (const auto& item : items) out.push_back(concept_from_json(item, ns));
        }
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, path + ": " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// organize

struct OrganizeArgs {
    std::string topic;
    std::string corpus;
    std::string kb;
    std::optional<std::string> ontology;
    std::optional<std::string> run_dir;
    std::optional<std::string> ns;
    bool auto_approve = false;
};

ReviewDecision interactive_review(const Context& ctx, const ProposedOntology& p, const std::string& path) {
    ctx.err << "Proposed ontology for \"" << p.topic << "\" (" << path << "):\n\n";
    for (const auto& c : p.concepts) ctx.err << render_class_code(OntologyGraph{}, c) << "\n\n";
    ctx.err << "Approve? [y/N], or enter the path of an edited ontology file: " << std::flush;
    std::string line;
    std::getline(ctx.in, line);
    line = text::trim(line);
    const auto answer = text::to_lower(line);
    ReviewDecision d;
    if (answer == "y" || answer == "yes") {
        d.approve = true;
    } else if (!line.empty() && answer != "n" && answer != "no") {
        d.edited_path = line;
    }
    return d;
}

int cmd_organize(Context& ctx, const OrganizeArgs& a, int& phase) {
    const auto corpus = load_corpus(a.corpus);
    if (a.ontology) require_file(*a.ontology, "edited ontology");
    const ResearchTask task{a.topic, TaskMode::organize, a.corpus, a.kb, ""};
    validate_task(task);
    const std::string run_dir =
        a.run_dir.value_or((fs::path(a.kb).parent_path() / "runs" / run_id(task)).string());
    auto store = open_kb(ctx, a.kb, true);
    auto llm = ctx.gateway();
    const std::string proposal_path = (fs::path(run_dir) / "proposal.json").string();

    ProposedOntology approved;
    if (a.ontology) {
        save_proposal(ProposedOntology{a.topic, {}, ProposalStatus::proposed, ""}, proposal_path);
        approved = review_gate(proposal_path, {false, *a.ontology, "supplied with --ontology"});
    } else {
        phase = kExitRuntimeFailure;
        auto proposed = propose_ontology(a.topic, *llm, proposal_path, a.ns.value_or(ctx.cfg.defaults.ns));
        phase = kExitUserError;
        const auto decision = a.auto_approve ? ReviewDecision{true, std::nullopt, "auto-approved"}
                                             : interactive_review(ctx, proposed, proposal_path);
        approved = review_gate(proposal_path, decision);
    }

    phase = kExitRuntimeFailure;
    auto manifest = run_organization(approved, corpus, *store, *llm, {run_dir, ctx.cfg.limits.candidate_count});
    save_kb(*store, a.kb);
    auto j = manifest_to_json(manifest);
    j["kb"] = a.kb;
    j["run_dir"] = run_dir;
    ctx.emit(j);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// research

struct ResearchArgs {
    std::string task;
    std::string kb;
    std::string out;
    std::optional<std::string> search_fixtures;
};

int cmd_research(Context& ctx, const ResearchArgs& a, int& phase) {
    validate_task(ResearchTask{a.task, TaskMode::research, "", a.kb, a.out});
    require_file(a.kb, "knowledge base");
    auto store = open_kb(ctx, a.kb, false);
    auto llm = ctx.gateway();
    if (a.search_fixtures) {
        require_dir(*a.search_fixtures, "search fixtures");
        ctx.cfg.search.fixtures = *a.search_fixtures;
    }
    auto search = make_search(ctx.cfg);

    phase = kExitRuntimeFailure;
    ResearchConfig rc;
    rc.run_dir = a.out;
    rc.computation = computation_config(ctx.cfg);
    rc.text = text_cycle_config(ctx.cfg);
    rc.clock = ctx.clock();
    const auto doc = run_research(a.task, *store, *llm, search.get(), rc);
    const auto report = assemble_report(doc, a.out);
    if (ctx.g.pretty) {
        ctx.out << report << "\n";
    } else {
        std::size_t artifacts = 0;
        for (const auto& s : doc.sections) artifacts += s.artifacts.size();
        ctx.emit(ordered_json{{"report", report},
                              {"sections", doc.sections.size()},
                              {"artifacts", artifacts},
                              {"sources", doc.sources.size()}});
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// align / extract

struct AlignArgs {
    std::string ontology;
    std::string query;
    std::optional<std::size_t> k;
    std::optional<std::string> out;
};

int cmd_align(Context& ctx, const AlignArgs& a, int& phase) {
    require_file(a.ontology, "ontology file");
    OntologyGraph graph = load_ontology(a.ontology);
    auto queries = read_concepts(a.query);
    auto llm = ctx.gateway();

    phase = kExitRuntimeFailure;
    EmbeddingIndex index = embed_ontology(graph, *llm);
    ordered_json results = ordered_json::array();
    for (auto q : queries) {
        q.parent.clear();
        Diagnostics issues;
        auto e = align_concept(q, graph, *llm, a.k.value_or(ctx.cfg.limits.candidate_count), &index, &issues);
        graph = std::move(e.graph);
        ordered_json r{{"concept", q.qualified()}, {"parent", e.attached_parent}};
        r["equivalent_to"] = e.equivalent_to ? ordered_json(*e.equivalent_to) : ordered_json(nullptr);
        r["issues"] = ordered_json::array();
        for (const auto& d : issues) r["issues"].push_back(d.message);
        results.push_back(std::move(r));
    }
    if (a.out) text::write_file(*a.out, ontology_to_json(graph).dump(2) + "\n");
    ctx.emit(ordered_json{{"alignments", results}});
    return kExitOk;
}

struct ExtractArgs {
    std::string ontology;
    std::string text_path;
    std::optional<std::string> ns;
    std::vector<std::string> types;
    bool open = false;
    std::string source;
};

int cmd_extract(Context& ctx, const ExtractArgs& a, int& phase) {
    require_file(a.ontology, "ontology file");
    require_file(a.text_path, "text file");
    const OntologyGraph graph = load_ontology(a.ontology);
    ExtractionRequest req;
    req.text = text::read_file(a.text_path);
    req.ns = a.ns.value_or(ctx.cfg.defaults.ns);
    req.mode = a.open ? ExtractionMode::open : ExtractionMode::closed;
    req.allowed_types = a.types;
    req.source_id = a.source.empty() ? a.text_path : a.source;
    req.timestamp = ctx.clock()();
    validate_request(req);
    auto llm = ctx.gateway();

    phase = kExitRuntimeFailure;
    const auto r = extract(req, graph, *llm);
    ordered_json j;
    j["objects"] = ordered_json::array();
    for (const auto& o : r.objects) j["objects"].push_back(object_to_json(o));
    j["imported"] = r.imported;
    j["issues"] = ordered_json::array();
    for (const auto& i : r.issues) {
        j["issues"].push_back({{"kind", issue_kind_name(i.kind)}, {"message", i.message}, {"position", i.position}});
    }
    for (const auto& d : r.diagnostics) j["issues"].push_back({{"kind", "diagnostic"}, {"message", d.message}});
    j["reason"] = r.reason ? ordered_json(*r.reason) : ordered_json(nullptr);
    ctx.emit(j);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string dataset;
    std::optional<std::size_t> k;
    std::string pred, gold, task;
    std::optional<std::string> workdir;
    std::optional<int> hops;
    std::string report;
    std::optional<std::string> rubric;
    std::vector<std::string> judge_mocks;
};

int cmd_eval_taxonomy(Context& ctx, const EvalArgs& a, int& phase) {
    require_file(a.dataset, "dataset");
    const auto data = load_taxonomy_dataset(a.dataset);
    auto llm = ctx.gateway();
    phase = kExitRuntimeFailure;
    ctx.emit(taxonomy_result_to_json(eval_taxonomy(data, llm_aligner(*llm, a.k.value_or(ctx.cfg.limits.candidate_count)))));
    return kExitOk;
}

int cmd_eval_ie(Context& ctx, const EvalArgs& a, int& phase) {
    const auto task = parse_ie_task(a.task);
    require_file(a.pred, "predictions");
    require_file(a.gold, "gold dataset");
    const auto pred = load_ie_dataset(a.pred);
    const auto gold = load_ie_dataset(a.gold);
    auto j = f1_result_to_json(eval_ie_dataset(pred, gold, task));
    phase = kExitRuntimeFailure;
    j["task"] = ie_task_name(task);
    ctx.emit(j);
    return kExitOk;
}

int cmd_eval_kbqa(Context& ctx, const EvalArgs& a, int& phase) {
    require_file(a.dataset, "dataset");
    const auto data = load_kbqa_dataset(a.dataset);
    auto llm = ctx.gateway();
    phase = kExitRuntimeFailure;
    KbqaConfig kc;
    kc.computation = computation_config(ctx.cfg);
    if (a.workdir) kc.computation.workdir = *a.workdir;
    if (a.hops) kc.hops = *a.hops;
    ctx.emit(kbqa_result_to_json(eval_kbqa(data, *llm, kc)));
    return kExitOk;
}

int cmd_eval_report(Context& ctx, const EvalArgs& a, int& phase) {
    require_file(a.report, "report");
    const std::string report = text::read_file(a.report);
    std::string rubric(kDefaultRubric);
    if (a.rubric) {
        require_file(*a.rubric, "rubric");
        rubric = text::read_file(*a.rubric);
    }
    std::vector<std::shared_ptr<LlmGateway>> owned;
    for (const auto& m : a.judge_mocks) owned.push_back(make_gateway(ctx.cfg, m));
    if (owned.empty()) owned.push_back(ctx.gateway());
    std::vector<LlmGateway*> judges;
    for (const auto& g : owned) judges.push_back(g.get());
    phase = kExitRuntimeFailure;
    ctx.emit(report_score_to_json(judge_report(report, rubric, judges)));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// kb

struct KbArgs {
    std::string kb;
    std::optional<std::string> name;
    std::optional<std::string> text_query;
    bool exact = false;
    std::size_t limit = 10;
    std::string incoming;
};

int cmd_kb_stats(Context& ctx, const KbArgs& a, int&) {
    require_file(a.kb, "knowledge base");
    auto store = open_kb(ctx, a.kb, false);
    ordered_json counts = ordered_json::object();
    for (const auto& [c, n] : store->concept_counts()) counts[c] = n;
    ctx.emit(ordered_json{{"objects", store->size()}, {"ontology_concepts", store->ontology().size()}, {"concepts", counts}});
    return kExitOk;
}

int cmd_kb_query(Context& ctx, const KbArgs& a, int&) {
    require_file(a.kb, "knowledge base");
    if (!a.name == !a.text_query) throw Error(Errc::precondition, "kb query needs exactly one of --name or --text");
    auto store = open_kb(ctx, a.kb, false);
    ordered_json results = ordered_json::array();
    if (a.name) {
        auto found = store->query_by_name(*a.name, false);
        if (found.empty() && !a.exact) found = store->query_by_name(*a.name, true);
        for (const auto& o : found) results.push_back(object_to_json(o));
    } else {
        for (const auto& hit : store->fulltext_search(*a.text_query, a.limit)) {
            auto o = store->get(hit.id);
            if (!o) continue;
            auto j = object_to_json(*o);
            j["score"] = hit.score;
            results.push_back(std::move(j));
        }
    }
    ctx.emit(ordered_json{{"results", results}});
    return kExitOk;
}

int cmd_kb_merge_check(Context& ctx, const KbArgs& a, int&) {
    require_file(a.kb, "knowledge base");
    require_file(a.incoming, "incoming objects");
    auto store = open_kb(ctx, a.kb, false);
    const auto& graph = store->ontology();
    std::map<std::string, std::string> seen; // id -> display name among incoming
    ordered_json collisions = ordered_json::array();
    std::size_t checked = 0, lineno = 0;
    for (const auto& line : text::split_lines(text::read_file(a.incoming))) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        KnowledgeObject o;
        try {
            o = object_from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, a.incoming + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
        ++checked;
        const auto key = merge_key(graph, o.concept_name, o.display_name);
        const auto id = object_id(graph, o.concept_name, o.display_name);
        if (auto existing = store->get(id)) {
            collisions.push_back({{"line", lineno}, {"id", id}, {"concept", key.first}, {"key", key.second},
                                  {"incoming", o.display_name}, {"existing", existing->display_name},
                                  {"with", "kb"}});
        } else if (auto it = seen.find(id); it != seen.end()) {
            collisions.push_back({{"line", lineno}, {"id", id}, {"concept", key.first}, {"key", key.second},
                                  {"incoming", o.display_name}, {"existing", it->second},
                                  {"with", "incoming"}});
        }
        seen.emplace(id, o.display_name);
    }
    ctx.emit(ordered_json{{"checked", checked}, {"collisions", collisions}});
    return kExitOk;
}

void render_pretty_into(const ordered_json& j, int indent, std::string& out) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    auto scalar = [](const ordered_json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            if (v.is_structured() && !v.empty()) {
                out += pad + k + ":\n";
                render_pretty_into(v, indent + 1, out);
            } else {
                out += pad + k + ": " + (v.is_structured() ? std::string(v.is_array() ? "(none)" : "{}") : scalar(v)) + "\n";
            }
        }
    } else if (j.is_array()) {
        for (const auto& v : j) {
            if (v.is_structured()) {
                out += pad + "-\n";
                render_pretty_into(v, indent + 1, out);
            } else {
                out += pad + "- " + scalar(v) + "\n";
            }
        }
    } else {
        out += pad + scalar(j) + "\n";
    }
}

} // namespace

std::string render_pretty(const ordered_json& j) {
    std::string out;
    render_pretty_into(j, 0, out);
    return out;
}

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge-driven deep research: organize a corpus into a knowledge base, then research over it."};
    app.name("kdr");
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config_path, "Config file (JSON); defaults to $KDR_CONFIG");
    app.add_option("--mock", g.mock, "Scripted mock model (JSON) instead of live endpoints");
    app.add_option("--transcript", g.transcript, "Write the model transcript to this JSON-lines file");
    app.add_flag("--pretty", g.pretty, "Human-readable output instead of JSON");

    OrganizeArgs oa;
    auto* organize = app.add_subcommand("organize", "Propose, review and populate a knowledge base from a corpus");
    organize->add_option("--topic", oa.topic, "Research topic")->required();
    organize->add_option("--corpus", oa.corpus, "Corpus directory (.txt, .md, .html)")->required();
    organize->add_option("--kb", oa.kb, "Knowledge base file (created when missing)")->required();
    organize->add_option("--ontology", oa.ontology, "Edited ontology file; skips the proposal");
    organize->add_flag("--auto-approve", oa.auto_approve, "Approve the proposed ontology without prompting");
    organize->add_option("--run-dir", oa.run_dir, "Run directory (default: runs/{id} next to the KB)");
    organize->add_option("--namespace", oa.ns, "Namespace of proposed concepts");

    ResearchArgs ra;
    auto* research = app.add_subcommand("research", "Plan, analyse and write a report over a knowledge base");
    research->add_option("--task", ra.task, "Research task")->required();
    research->add_option("--kb", ra.kb, "Knowledge base file")->required();
    research->add_option("--out", ra.out, "Run directory; report.md is written here")->required();
    research->add_option("--search-fixtures", ra.search_fixtures, "Offline web-search records directory");

    AlignArgs aa;
    auto* align = app.add_subcommand("align", "Align new concepts into an ontology");
    align->add_option("--ontology", aa.ontology, "Existing ontology file")->required();
    align->add_option("--query", aa.query, "Ontology file with the concepts to align")->required();
    align->add_option("--k", aa.k, "Candidates per concept");
    align->add_option("--out", aa.out, "Write the expanded ontology here");

    ExtractArgs ea;
    auto* extract_cmd = app.add_subcommand("extract", "Extract knowledge objects from a text");
    extract_cmd->add_option("--ontology", ea.ontology, "Ontology file")->required();
    extract_cmd->add_option("--text", ea.text_path, "Text file")->required();
    extract_cmd->add_option("--namespace", ea.ns, "Namespace to extract into");
    extract_cmd->add_option("--types", ea.types, "Allowed types (closed mode)")->delimiter(',');
    extract_cmd->add_flag("--open", ea.open, "Open mode: any concept of the namespace");
    extract_cmd->add_option("--source", ea.source, "Provenance source id (default: the text path)");

    EvalArgs va;
    auto* eval = app.add_subcommand("eval", "Evaluation harnesses");
    eval->require_subcommand(1);
    auto* ev_tax = eval->add_subcommand("taxonomy", "Taxonomy expansion accuracy and Wu-Palmer");
    ev_tax->add_option("--dataset", va.dataset, "Taxonomy dataset (JSON)")->required();
    ev_tax->add_option("--k", va.k, "Candidates per concept");
    auto* ev_ie = eval->add_subcommand("ie", "Micro precision/recall/F1 for IE predictions");
    ev_ie->add_option("--pred", va.pred, "Predictions (JSON-lines)")->required();
    ev_ie->add_option("--gold", va.gold, "Gold annotations (JSON-lines)")->required();
    ev_ie->add_option("--task", va.task, "ner, re, ed or eae")->required();
    auto* ev_kbqa = eval->add_subcommand("kbqa", "Hits@1 over subgraph question answering");
    ev_kbqa->add_option("--dataset", va.dataset, "KBQA dataset (JSON-lines)")->required();
    ev_kbqa->add_option("--workdir", va.workdir, "Keep per-question sandboxes here");
    ev_kbqa->add_option("--hops", va.hops, "Subgraph hops around the topic entity");
    auto* ev_report = eval->add_subcommand("report", "Judge a report per aspect");
    ev_report->add_option("--report", va.report, "Report markdown")->required();
    ev_report->add_option("--rubric", va.rubric, "Rubric text");
    ev_report->add_option("--judge-mock", va.judge_mocks, "Scripted judge (repeat for several judges)");

    KbArgs ka;
    auto* kb = app.add_subcommand("kb", "Inspect a knowledge base");
    kb->require_subcommand(1);
    auto* kb_stats = kb->add_subcommand("stats", "Object counts per concept");
    kb_stats->add_option("--kb", ka.kb, "Knowledge base file")->required();
    auto* kb_query = kb->add_subcommand("query", "Objects by name or full-text query");
    kb_query->add_option("--kb", ka.kb, "Knowledge base file")->required();
    kb_query->add_option("--name", ka.name, "Display name");
    kb_query->add_flag("--exact", ka.exact, "No token-overlap fallback when no name matches exactly");
    kb_query->add_option("--text", ka.text_query, "Full-text query");
    kb_query->add_option("--limit", ka.limit, "Full-text result limit");
    auto* kb_merge = kb->add_subcommand("merge-check", "Report merge-key collisions without writing");
    kb_merge->add_option("--kb", ka.kb, "Knowledge base file")->required();
    kb_merge->add_option("--incoming", ka.incoming, "Objects to check (JSON-lines)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUserError;
    }

    int phase = kExitUserError;
    try {
        Context ctx{g, load_config(g.config_path), in, out, err};
        if (g.transcript) ctx.cfg.defaults.transcript = *g.transcript;
        if (*organize) return cmd_organize(ctx, oa, phase);
        if (*research) return cmd_research(ctx, ra, phase);
        if (*align) return cmd_align(ctx, aa, phase);
        if (*extract_cmd) return cmd_extract(ctx, ea, phase);
        if (*ev_tax) return cmd_eval_taxonomy(ctx, va, phase);
        if (*ev_ie) return cmd_eval_ie(ctx, va, phase);
        if (*ev_kbqa) return cmd_eval_kbqa(ctx, va, phase);
        if (*ev_report) return cmd_eval_report(ctx, va, phase);
        if (*kb_stats) return cmd_kb_stats(ctx, ka, phase);
        if (*kb_query) return cmd_kb_query(ctx, ka, phase);
        if (*kb_merge) return cmd_kb_merge_check(ctx, ka, phase);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return phase;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntimeFailure;
    }
    return kExitUserError;
}

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"kdr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
}

} // namespace kdr
