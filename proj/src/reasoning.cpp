// SPDX-License-Identifier: Apache-2.0
#include "kdr/reasoning.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>

#include "kdr/error.hpp"
#include "kdr/fulltext.hpp"
#include "kdr/templates.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;

namespace kdr {

// ---------------------------------------------------------------------------
// Task decomposition

std::string_view request_kind_name(RequestKind k) noexcept {
    return k == RequestKind::data_analysis ? "data_analysis" : "web_search";
}

namespace {

struct Tag {
    bool begin;
    std::string name;
    std::size_t pos, end;
};

/// Finds `<begin_x>` / `<end_x>` at `pos`, where x is a lowercase identifier.
std::optional<Tag> tag_at(std::string_view s, std::size_t pos) {
    if (s[pos] != '<') return std::nullopt;
    std::size_t i = pos + 1;
    bool begin;
    if (s.substr(i, 6) == "begin_") {
        begin = true;
        i += 6;
    } else if (s.substr(i, 4) == "end_") {
        begin = false;
        i += 4;
    } else {
        return std::nullopt;
    }
    std::size_t start = i;
    while (i < s.size() && (std::islower(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
    if (i == start || i >= s.size() || s[i] != '>') return std::nullopt;
    return Tag{begin, std::string(s.substr(start, i - start)), pos, i + 1};
}

std::optional<RequestKind> kind_of_tag(const std::string& name) {
    if (name == "data_analysis") return RequestKind::data_analysis;
    if (name == "web_search") return RequestKind::web_search;
    return std::nullopt;
}

/// Heading text when the line at `pos` is a markdown heading.
std::optional<std::string> heading_at(std::string_view s, std::size_t pos, std::size_t line_end) {
    std::size_t i = pos;
    while (i < line_end && i - pos < 6 && s[i] == '#') ++i;
    if (i == pos || i >= line_end || s[i] != ' ') return std::nullopt;
    auto title = text::trim(s.substr(i, line_end - i));
    while (!title.empty() && title.back() == '#') title.pop_back();
    title = text::trim(title);
    if (title.empty()) return std::nullopt;
    return title;
}

} // namespace

std::vector<CyclePlan> parse_decomposition(std::string_view plan) {
    std::vector<CyclePlan> out;
    CyclePlan current{std::string(kDefaultSectionTitle), {}};
    std::optional<Tag> open;
    bool line_start = true;
    auto flush = [&] {
        if (!current.requests.empty()) out.push_back(std::move(current));
        current = CyclePlan{};
    };
    for (std::size_t i = 0; i < plan.size();) {
        if (line_start && !open) {
            std::size_t line_end = plan.find('\n', i);
            if (line_end == std::string_view::npos) line_end = plan.size();
            if (auto title = heading_at(plan, i, line_end)) {
                flush();
                current.section_title = *title;
                i = line_end;
                continue;
            }
        }
        line_start = plan[i] == '\n';
        if (plan[i] != '<') {
            ++i;
            continue;
        }
        auto tag = tag_at(plan, i);
        if (!tag) {
            ++i;
            continue;
        }
        auto kind = kind_of_tag(tag->name);
        if (!kind) {
            throw Error(Errc::unbalanced_tags, "unknown tag <" + std::string(tag->begin ? "begin_" : "end_") +
                                                   tag->name + ">", tag->pos);
        }
        if (tag->begin) {
            if (open) throw Error(Errc::unbalanced_tags, "nested <begin_" + tag->name + ">", tag->pos);
            open = tag;
        } else {
            if (!open) throw Error(Errc::unbalanced_tags, "<end_" + tag->name + "> without an opening tag", tag->pos);
            if (open->name != tag->name) {
                throw Error(Errc::unbalanced_tags, "<end_" + tag->name + "> closes <begin_" + open->name + ">",
                            tag->pos);
            }
            auto query = text::trim(plan.substr(open->end, tag->pos - open->end));
            if (query.empty()) throw Error(Errc::empty_query, "empty " + tag->name + " query", open->pos);
            current.requests.push_back({*kind, std::move(query)});
            open.reset();
        }
        i = tag->end;
    }
    if (open) throw Error(Errc::unbalanced_tags, "<begin_" + open->name + "> is never closed", open->pos);
    flush();
    return out;
}

std::string render_decomposition(const std::vector<CyclePlan>& plans) {
    std::string out;
    for (const auto& p : plans) {
        out += "## " + p.section_title + "\n";
        for (const auto& r : p.requests) {
            const std::string tag(request_kind_name(r.kind));
            out += "<begin_" + tag + ">" + r.query + "<end_" + tag + ">\n";
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ontology search and code generation

std::string concept_search_text(const Concept& c) {
    std::string s = c.name + " " + c.description;
    for (const auto& a : c.attributes) s += " " + a.name;
    return s;
}

std::vector<ConceptHit> ontology_search(const std::string& query, const OntologyGraph& graph, std::size_t limit) {
    if (limit == 0) throw Error(Errc::precondition, "limit must be at least 1");
    InvertedIndex index;
    for (const auto& key : graph.order()) index.put(key, concept_search_text(graph.at(key)));
    auto hits = index.search(query, limit);
    if (hits.empty()) throw Error(Errc::no_concept_found, "no concept matches '" + query + "'");
    std::vector<ConceptHit> out;
    for (const auto& h : hits) out.push_back({h.id, render_class_code(graph, h.id), h.score});
    return out;
}

std::string render_codegen_prompt(const std::string& query, const std::vector<std::string>& class_codes,
                                  const std::optional<std::string>& feedback, const std::string& note) {
    std::string p = "Class definitions:\n\n```python\n" + text::join(class_codes, "\n\n") + "\n```\n\n";
    p += std::string(templates::kCodegenContract);
    if (!note.empty()) p += " " + note;
    p += "\n\nQuery: " + query;
    if (feedback && !feedback->empty()) p += "\n\nFeedback on the previous attempt:\n" + *feedback;
    return p;
}

std::string generate_analysis_code(const std::string& query, const std::vector<std::string>& class_codes,
                                   const std::optional<std::string>& feedback, LlmGateway& llm,
                                   const std::string& note) {
    if (class_codes.empty()) throw Error(Errc::precondition, "code generation needs class definitions");
    auto code = text::extract_code_block(llm.ask(render_codegen_prompt(query, class_codes, feedback, note)));
    if (!text::contains_word(code, "search_results")) {
        throw Error(Errc::rejected_code, "generated code does not use search_results");
    }
    return code;
}

// ---------------------------------------------------------------------------
// Instance query

std::vector<std::string> parse_topic_entities(std::string_view response) {
    std::vector<std::string> out;
    for (auto line : text::split_lines(response)) {
        line = text::trim(line);
        std::size_t i = 0;
        while (i < line.size() && (line[i] == '-' || line[i] == '*' || line[i] == ' ')) ++i;
        std::size_t j = i;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')')) i = j + 1;
        line = text::trim(line.substr(i));
        if (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front()) {
            line = text::trim(line.substr(1, line.size() - 2));
        }
        const auto lower = text::to_lower(line);
        if (line.empty() || lower == "none" || lower == "n/a") continue;
        if (std::find(out.begin(), out.end(), line) == out.end()) out.push_back(line);
    }
    return out;
}

InstanceQueryResult instance_query(const std::string& query, const KnowledgeStore& store, LlmGateway& llm, int hops) {
    InstanceQueryResult r;
    r.entities = parse_topic_entities(
        llm.ask(std::string(templates::kTopicEntities) + "\n\nQuery: " + query));
    if (r.entities.empty()) throw Error(Errc::no_topic_entity, "no topic entity recognized in '" + query + "'");
    for (const auto& name : r.entities) {
        auto hits = store.query_by_name(name, false);
        if (hits.empty()) {
            hits = store.query_by_name(name, true);
            if (hits.size() > 1) hits.resize(1);
        }
        for (const auto& h : hits) {
            if (std::find(r.seeds.begin(), r.seeds.end(), h.id) == r.seeds.end()) r.seeds.push_back(h.id);
        }
    }
    if (r.seeds.empty()) {
        throw Error(Errc::no_instances_found,
                    "no stored object matches " + text::join(r.entities, ", ") + " (query: " + query + ")");
    }
    r.objects = store.subgraph(r.seeds, hops);
    return r;
}

// ---------------------------------------------------------------------------
// Script assembly and evaluation

std::vector<std::string> class_closure(const OntologyGraph& graph, const std::vector<std::string>& concepts,
                                       const std::vector<KnowledgeObject>& objects) {
    std::set<std::string> needed;
    auto add = [&](const std::string& key) {
        if (!graph.contains(key)) return;
        for (const auto& a : graph.ancestors(key)) {
            if (!is_root_name(a)) needed.insert(a);
        }
    };
    for (const auto& c : concepts) add(c);
    for (const auto& o : objects) add(o.concept_name);
    // Shallower concepts first; graph insertion order within a depth.
    std::vector<std::string> ordered;
    for (const auto& key : graph.order()) {
        if (needed.count(key)) ordered.push_back(key);
    }
    std::stable_sort(ordered.begin(), ordered.end(), [&](const std::string& a, const std::string& b) {
        return depth(graph, a) < depth(graph, b);
    });
    return ordered;
}

std::string assemble_script(const std::vector<std::string>& class_codes, const std::vector<KnowledgeObject>& objects,
                            const std::string& analysis_code, const OntologyGraph& graph, const NameLookup& lookup) {
    if (!text::contains_word(analysis_code, "search_results")) {
        throw Error(Errc::rejected_code, "analysis code does not use search_results");
    }
    std::string script;
    for (const auto& c : class_codes) script += c + "\n\n\n";
    script += render_declaration_code(objects, graph, "search_results", lookup) + "\n\n";
    script += analysis_code;
    if (script.back() != '\n') script += '\n';
    return script;
}

Verdict evaluate_result(const std::string& query, const ExecutionResult& result, LlmGateway& llm) {
    Verdict v;
    if (result.exit_status != ExitStatus::ok) {
        v.feedback = result.stderr_text.empty() ? std::string("execution ") + std::string(exit_status_name(result.exit_status))
                                                : result.stderr_text;
        return v;
    }
    constexpr std::size_t kShown = 4000;
    std::string out = result.stdout_text.substr(0, kShown);
    if (result.stdout_text.size() > kShown || result.stdout_truncated) out += "\n[output truncated]";
    std::vector<std::string> files;
    for (const auto& f : result.produced_files) files.push_back(f.path + " (" + f.kind + ")");
    const std::string prompt = std::string(templates::kJudge) + "\n\nQuery: " + query + "\n\nOutput:\n" + out +
                               "\n\nFiles: " + (files.empty() ? std::string("none") : text::join(files, ", "));
    const std::string response = llm.ask(prompt);
    v.judged = true;
    const std::string trimmed = text::trim(response);
    std::size_t i = 0;
    while (i < trimmed.size() && (trimmed[i] == '*' || trimmed[i] == '`')) ++i;
    std::size_t j = i;
    while (j < trimmed.size() && std::isalpha(static_cast<unsigned char>(trimmed[j]))) ++j;
    std::string token = trimmed.substr(i, j - i);
    for (auto& c : token) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::string rest = trimmed.substr(j);
    std::size_t k = 0;
    while (k < rest.size() && (rest[k] == '*' || rest[k] == '`' || rest[k] == ':' || rest[k] == '-' || rest[k] == ' ')) ++k;
    rest = text::trim(rest.substr(k));
    if (token == "PASS") {
        v.pass = true;
        v.feedback = rest;
    } else if (token == "FAIL") {
        v.feedback = rest;
    } else {
        v.unparseable = true;
        v.feedback = response;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Computation cycle

std::string_view cycle_status_name(CycleStatus s) noexcept {
    switch (s) {
    case CycleStatus::passed: return "passed";
    case CycleStatus::exhausted: return "exhausted";
    case CycleStatus::failed: return "failed";
    }
    return "failed";
}

std::string ComputationTrace::output() const {
    if (final_status != CycleStatus::passed || iterations.empty() || !iterations.back().execution) return {};
    return iterations.back().execution->stdout_text;
}

namespace {

std::string make_temp_dir(const std::string& prefix) {
    std::string tmpl = (fs::temp_directory_path() / (prefix + "-XXXXXX")).string();
    if (!mkdtemp(tmpl.data())) throw Error(Errc::io_failure, "cannot create temporary directory");
    return tmpl;
}

} // namespace

ComputationTrace run_computation_cycle(const std::string& query, const OntologyGraph& graph,
                                       const KnowledgeStore& store, LlmGateway& llm, const ComputationConfig& cfg) {
    if (cfg.max_iterations < 1) throw Error(Errc::precondition, "max_iterations must be at least 1");
    ComputationTrace trace;
    trace.query = query;
    trace.workdir = cfg.workdir.empty() ? make_temp_dir("kdr-cycle") : cfg.workdir;
    fs::create_directories(trace.workdir);

    std::optional<std::vector<KnowledgeObject>> instances;
    std::optional<std::string> feedback;
    const NameLookup lookup = [&store](const std::string& id) -> std::optional<std::string> {
        if (auto o = store.get(id)) return o->display_name;
        return std::nullopt;
    };

    auto fail = [&](IterationRecord& rec, const Error& e) {
        rec.feedback = e.what();
        trace.iterations.push_back(std::move(rec));
        trace.final_status = CycleStatus::failed;
        trace.reason = e.what();
    };

    for (int n = 1; n <= cfg.max_iterations; ++n) {
        IterationRecord rec;
        rec.index = n;
        std::vector<std::string> concepts;
        try {
            if (!cfg.fixed_concepts.empty()) {
                for (const auto& c : cfg.fixed_concepts) concepts.push_back(graph.require(c));
            } else {
                for (const auto& h : ontology_search(query, graph, cfg.concept_limit)) concepts.push_back(h.name);
            }
        } catch (const Error& e) {
            fail(rec, e);
            return trace;
        }
        rec.concepts = concepts;
        std::vector<std::string> codes;
        for (const auto& c : concepts) codes.push_back(render_class_code(graph, c));
        try {
            rec.code = generate_analysis_code(query, codes, feedback, llm, cfg.codegen_note);
        } catch (const Error& e) {
            if (e.code() != Errc::rejected_code) throw;
            rec.feedback = e.what();
            feedback = rec.feedback;
            trace.iterations.push_back(std::move(rec));
            continue;
        }
        if (!instances) {
            try {
                if (!cfg.seed_ids.empty()) {
                    instances = store.subgraph(cfg.seed_ids, cfg.hops);
                } else {
                    instances = instance_query(query, store, llm, cfg.hops).objects;
                }
            } catch (const Error& e) {
                fail(rec, e);
                return trace;
            }
        }
        rec.instance_count = instances->size();

        const auto script = assemble_script(
            [&] {
                std::vector<std::string> all;
                for (const auto& c : class_closure(graph, concepts, *instances)) all.push_back(render_class_code(graph, c));
                return all;
            }(),
            *instances, rec.code, graph, lookup);
        const std::string iter_dir = (fs::path(trace.workdir) / ("iter_" + std::to_string(n))).string();
        text::write_file(iter_dir + ".py", script);
        auto exec = execute_script(script, cfg.limits, iter_dir);
        auto verdict = evaluate_result(query, exec, llm);
        rec.pass = verdict.pass;
        rec.feedback = verdict.feedback;
        if (verdict.pass) {
            for (const auto& f : exec.produced_files) {
                trace.artifacts.push_back((fs::path(exec.workdir) / f.path).string());
            }
        }
        rec.execution = std::move(exec);
        feedback = verdict.feedback.empty() ? std::optional<std::string>("the result did not satisfy the query")
                                            : std::optional<std::string>(verdict.feedback);
        trace.iterations.push_back(std::move(rec));
        if (verdict.pass) {
            trace.final_status = CycleStatus::passed;
            return trace;
        }
    }
    trace.final_status = CycleStatus::exhausted;
    trace.reason = "no passing result after " + std::to_string(cfg.max_iterations) + " iteration(s)";
    return trace;
}

nlohmann::ordered_json computation_trace_to_json(const ComputationTrace& t) {
    nlohmann::ordered_json j;
    j["query"] = t.query;
    j["final_status"] = cycle_status_name(t.final_status);
    j["reason"] = t.reason;
    j["iterations"] = nlohmann::ordered_json::array();
    for (const auto& it : t.iterations) {
        nlohmann::ordered_json r;
        r["index"] = it.index;
        r["concepts"] = it.concepts;
        r["code"] = it.code;
        r["instance_count"] = it.instance_count;
        r["execution"] = it.execution ? execution_result_to_json(*it.execution) : nlohmann::ordered_json(nullptr);
        r["verdict"] = it.pass ? "pass" : "fail";
        r["feedback"] = it.feedback;
        j["iterations"].push_back(std::move(r));
    }
    j["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& a : t.artifacts) j["artifacts"].push_back(fs::path(a).filename().string());
    return j;
}

// ---------------------------------------------------------------------------
// Text cycle

namespace {

struct CheckResult {
    bool sufficient;
    std::string missing;
};

CheckResult parse_sufficiency(const std::string& response) {
    const auto t = text::trim(response);
    std::size_t i = 0;
    while (i < t.size() && (t[i] == '*' || t[i] == '`')) ++i;
    std::size_t j = i;
    while (j < t.size() && std::isalpha(static_cast<unsigned char>(t[j]))) ++j;
    const auto token = text::to_lower(t.substr(i, j - i));
    std::string rest = t.substr(j);
    std::size_t k = 0;
    while (k < rest.size() && (rest[k] == ':' || rest[k] == '*' || rest[k] == '-' || rest[k] == ' ')) ++k;
    rest = text::trim(rest.substr(k));
    if (token == "sufficient") return {true, ""};
    if (token == "insufficient") return {false, rest};
    return {false, t};
}

std::string render_notes(const std::vector<std::pair<std::size_t, std::string>>& notes,
                         const std::vector<Source>& sources) {
    std::string s;
    for (const auto& [idx, summary] : notes) {
        s += "[" + std::to_string(idx + 1) + "] " + sources[idx].title + "\n" + summary + "\n\n";
    }
    return text::trim(s);
}

} // namespace

TextResult run_text_cycle(const std::string& query, SearchBackend& search, LlmGateway& llm,
                          const TextCycleConfig& cfg) {
    if (cfg.max_rounds < 1) throw Error(Errc::precondition, "max_rounds must be at least 1");
    TextResult r;
    r.query = query;
    std::vector<std::pair<std::size_t, std::string>> notes;
    std::string missing;
    for (int round = 1; round <= cfg.max_rounds; ++round) {
        r.rounds = round;
        const std::string q = missing.empty() ? query : query + " " + missing;
        std::vector<SearchHit> hits;
        try {
            hits = search.search(q, cfg.hits_per_round);
        } catch (const Error& e) {
            if (e.code() != Errc::empty_corpus) throw;
            r.reason = e.what();
            return r;
        }
        for (const auto& h : hits) {
            Source src{h.title, h.url};
            if (std::find(r.sources.begin(), r.sources.end(), src) != r.sources.end()) continue;
            const auto summary = text::trim(llm.ask(std::string(templates::kSummarize) + "\n\nQuery: " + query +
                                                    "\n\nDocument: " + h.title + "\n" + h.body));
            r.sources.push_back(src);
            notes.emplace_back(r.sources.size() - 1, summary);
        }
        if (notes.empty()) {
            missing.clear();
            continue;
        }
        auto check = parse_sufficiency(llm.ask(std::string(templates::kSufficiency) + "\n\nQuery: " + query +
                                               "\n\nNotes:\n" + render_notes(notes, r.sources)));
        if (check.sufficient) {
            r.sufficient = true;
            break;
        }
        missing = check.missing.size() > 200 ? check.missing.substr(0, 200) : check.missing;
    }
    if (notes.empty()) {
        r.reason = "no relevant documents found";
        return r;
    }
    r.text = text::trim(llm.ask(std::string(templates::kWriter) + "\n\nQuery: " + query + "\n\nNotes:\n" +
                                render_notes(notes, r.sources)));
    if (!r.sufficient) r.reason = "information judged insufficient after " + std::to_string(r.rounds) + " round(s)";
    return r;
}

nlohmann::ordered_json text_result_to_json(const TextResult& t) {
    nlohmann::ordered_json j;
    j["query"] = t.query;
    j["text"] = t.text;
    j["sources"] = nlohmann::ordered_json::array();
    for (const auto& s : t.sources) j["sources"].push_back({{"title", s.title}, {"url", s.url}});
    j["sufficient"] = t.sufficient;
    j["rounds"] = t.rounds;
    j["reason"] = t.reason ? nlohmann::ordered_json(*t.reason) : nlohmann::ordered_json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Merge and revise

std::string merge_section(const SectionInputs& in, LlmGateway& llm) {
    std::vector<std::string> computed;
    for (const auto& t : in.computations) {
        if (t.final_status != CycleStatus::passed) continue;
        std::string block = "Query: " + t.query + "\nOutput:\n" + text::trim(t.output());
        if (!t.artifacts.empty()) {
            std::vector<std::string> names;
            for (const auto& a : t.artifacts) names.push_back(fs::path(a).filename().string());
            block += "\nFiles: " + text::join(names, ", ");
        }
        computed.push_back(block);
    }
    std::vector<std::string> written;
    for (const auto& t : in.texts) {
        if (!t.text.empty()) written.push_back(t.text);
    }
    if (computed.empty() && written.empty()) throw Error(Errc::precondition, "section has nothing to merge");
    if (computed.empty()) return text::join(written, "\n\n");
    const std::string prompt = std::string(templates::kMerge) + "\n\nSection: " + in.title + "\n\nComputed results:\n" +
                               text::join(computed, "\n\n") + "\n\nWritten text:\n" +
                               (written.empty() ? std::string("(none)") : text::join(written, "\n\n"));
    return text::trim(llm.ask(prompt));
}

std::vector<SectionBody> revise_report(const std::string& title, const std::vector<SectionBody>& sections,
                                       LlmGateway& llm, Diagnostics* issues) {
    if (sections.empty()) return sections;
    std::string report = "# " + title + "\n\n";
    for (const auto& s : sections) report += "## " + s.title + "\n\n" + s.body + "\n\n";
    const auto response = llm.ask(std::string(templates::kGlobalRevision) + "\n\n" + text::trim(report));

    std::vector<SectionBody> revised;
    std::string body;
    for (const auto& line : text::split_lines(text::extract_code_block(response))) {
        if (line.rfind("## ", 0) == 0) {
            if (!revised.empty()) revised.back().body = text::trim(body);
            revised.push_back({text::trim(line.substr(3)), ""});
            body.clear();
        } else if (!revised.empty()) {
            body += line + "\n";
        }
    }
    if (!revised.empty()) revised.back().body = text::trim(body);
    bool same_titles = revised.size() == sections.size();
    for (std::size_t i = 0; same_titles && i < sections.size(); ++i) {
        same_titles = revised[i].title == sections[i].title && !revised[i].body.empty();
    }
    if (!same_titles) {
        if (issues) issues->push_back({Errc::precondition, "global revision changed the section structure; kept the merged text"});
        return sections;
    }
    return revised;
}

} // namespace kdr
