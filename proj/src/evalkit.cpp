// SPDX-License-Identifier: Apache-2.0
#include "kdr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>

#include "kdr/templates.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kdr {

// ---------------------------------------------------------------------------
// Taxonomy expansion

TaxonomyDataset taxonomy_dataset_from_json(const json& j) {
    TaxonomyDataset d;
    try {
        const std::string ns = j.at("namespace").get<std::string>();
        d.train = ontology_from_json(json{{"namespaces", {{ns, j.at("train")}}}});
        for (const auto& item : j.at("test")) {
            json c = item;
            TaxonomyLeaf leaf;
            leaf.gold_parent = c.at("gold_parent").get<std::string>();
            c.erase("gold_parent");
            leaf.concept_def = concept_from_json(c, ns);
            leaf.concept_def.parent.clear();
            d.test.push_back(std::move(leaf));
        }
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, std::string("taxonomy dataset: ") + e.what());
    }
    return d;
}

TaxonomyDataset load_taxonomy_dataset(const std::string& path) {
    try {
        return taxonomy_dataset_from_json(json::parse(text::read_file(path)));
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, path + ": " + e.what());
    }
}

Aligner llm_aligner(LlmGateway& llm, std::size_t k) {
    auto index = std::make_shared<std::optional<EmbeddingIndex>>();
    return [&llm, k, index](const Concept& leaf, const OntologyGraph& graph) {
        if (!*index) *index = embed_ontology(graph, llm);
        return align_concept(leaf, graph, llm, k, &**index).attached_parent;
    };
}

TaxonomyEvalResult eval_taxonomy(const TaxonomyDataset& data, const Aligner& aligner) {
    if (data.test.empty()) throw Error(Errc::precondition, "taxonomy dataset has no test leaves");
    TaxonomyEvalResult r;
    std::size_t correct = 0;
    double wup_sum = 0;
    for (const auto& leaf : data.test) {
        const auto gold = data.train.resolve(leaf.gold_parent, leaf.concept_def.ns);
        if (leaf.gold_parent.empty() || !gold) {
            throw Error(Errc::gold_parent_missing,
                        leaf.concept_def.qualified() + ": gold parent '" + leaf.gold_parent + "' is not in the taxonomy");
        }
        TaxonomyQueryResult q;
        q.query = leaf.concept_def.qualified();
        q.gold = *gold;
        const std::string raw = aligner(leaf.concept_def, data.train);
        const auto predicted = data.train.resolve(raw, leaf.concept_def.ns);
        q.predicted = predicted.value_or(raw);
        // Unknown predictions score zero.
        q.wup = predicted ? wu_palmer(data.train, *predicted, *gold) : 0.0;
        if (predicted && *predicted == *gold) ++correct;
        wup_sum += q.wup;
        r.per_query.push_back(std::move(q));
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.test.size());
    r.mean_wu_palmer = wup_sum / static_cast<double>(data.test.size());
    return r;
}

ordered_json taxonomy_result_to_json(const TaxonomyEvalResult& r) {
    ordered_json j;
    j["accuracy"] = r.accuracy;
    j["mean_wu_palmer"] = r.mean_wu_palmer;
    j["per_query"] = ordered_json::array();
    for (const auto& q : r.per_query) {
        j["per_query"].push_back({{"query", q.query}, {"predicted", q.predicted}, {"gold", q.gold}, {"wup", q.wup}});
    }
    return j;
}

// ---------------------------------------------------------------------------
// Information extraction

std::string_view ie_task_name(IeTask t) noexcept {
    switch (t) {
    case IeTask::ner: return "ner";
    case IeTask::re: return "re";
    case IeTask::ed: return "ed";
    case IeTask::eae: return "eae";
    }
    return "ner";
}

IeTask parse_ie_task(std::string_view s) {
    const auto l = text::to_lower(s);
    if (l == "ner") return IeTask::ner;
    if (l == "re") return IeTask::re;
    if (l == "ed") return IeTask::ed;
    if (l == "eae") return IeTask::eae;
    throw Error(Errc::precondition, "unknown IE task '" + std::string(s) + "' (ner, re, ed, eae)");
}

std::size_t ie_tuple_arity(IeTask t) noexcept { return t == IeTask::ner || t == IeTask::ed ? 2 : 3; }

F1Result f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    F1Result r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = r.precision + r.recall == 0 ? 0.0 : 2 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

namespace {

std::map<IeTuple, std::size_t> tuple_counts(const std::vector<IeTuple>& tuples, IeTask task, const char* side) {
    std::map<IeTuple, std::size_t> counts;
    for (const auto& t : tuples) {
        if (t.size() != ie_tuple_arity(task)) {
            throw Error(Errc::shape_mismatch, std::string(side) + " tuple has " + std::to_string(t.size()) +
                                                  " fields; " + std::string(ie_task_name(task)) + " needs " +
                                                  std::to_string(ie_tuple_arity(task)));
        }
        IeTuple norm;
        for (const auto& f : t) norm.push_back(text::normalize_answer(f));
        ++counts[norm];
    }
    return counts;
}

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

Counts match(const std::vector<IeTuple>& pred, const std::vector<IeTuple>& gold, IeTask task) {
    const auto p = tuple_counts(pred, task, "predicted");
    const auto g = tuple_counts(gold, task, "gold");
    Counts c;
    for (const auto& [t, n] : p) {
        auto it = g.find(t);
        const std::size_t hit = it == g.end() ? 0 : std::min(n, it->second);
        c.tp += hit;
        c.fp += n - hit;
    }
    for (const auto& [t, n] : g) {
        auto it = p.find(t);
        c.fn += n - (it == p.end() ? 0 : std::min(n, it->second));
    }
    return c;
}

std::vector<std::string> slot_strings(const json& v) {
    std::vector<std::string> out;
    auto one = [&](const json& x) {
        if (x.is_string()) {
            out.push_back(x.get<std::string>());
        } else if (x.is_number()) {
            out.push_back(text::format_number(x.get<double>()));
        } else {
            throw Error(Errc::shape_mismatch, "slot value must be a string or number");
        }
    };
    if (v.is_array()) {
        for (const auto& x : v) one(x);
    } else {
        one(v);
    }
    return out;
}

std::string single_slot(const Annotation& a, const std::string& key) {
    if (!a.slots.contains(key)) throw Error(Errc::shape_mismatch, a.type + " annotation lacks '" + key + "'");
    auto values = slot_strings(a.slots.at(key));
    if (values.size() != 1) throw Error(Errc::shape_mismatch, a.type + "." + key + " must hold one value");
    return values.front();
}

} // namespace

F1Result eval_ie_f1(const std::vector<IeTuple>& pred, const std::vector<IeTuple>& gold, IeTask task) {
    const auto c = match(pred, gold, task);
    return f1_from_counts(c.tp, c.fp, c.fn);
}

std::vector<IeTuple> ie_tuples(const IeExample& ex, IeTask task) {
    std::vector<IeTuple> out;
    for (const auto& a : ex.annotations) {
        switch (task) {
        case IeTask::ner: out.push_back({a.type, single_slot(a, "name")}); break;
        case IeTask::ed: out.push_back({a.type, single_slot(a, "trigger")}); break;
        case IeTask::re: out.push_back({single_slot(a, "head"), a.type, single_slot(a, "tail")}); break;
        case IeTask::eae:
            for (const auto& [role, v] : a.slots.items()) {
                if (role == "trigger") continue;
                for (const auto& arg : slot_strings(v)) out.push_back({a.type, role, arg});
            }
            break;
        }
    }
    return out;
}

F1Result eval_ie_dataset(const std::vector<IeExample>& pred, const std::vector<IeExample>& gold, IeTask task) {
    std::map<std::string, const IeExample*> by_id;
    for (const auto& p : pred) {
        if (!by_id.emplace(p.id, &p).second) throw Error(Errc::shape_mismatch, "duplicate prediction id " + p.id);
    }
    std::set<std::string> gold_ids;
    Counts total;
    for (const auto& g : gold) {
        gold_ids.insert(g.id);
        auto it = by_id.find(g.id);
        const auto c = match(it == by_id.end() ? std::vector<IeTuple>{} : ie_tuples(*it->second, task),
                             ie_tuples(g, task), task);
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn += c.fn;
    }
    for (const auto& [id, _] : by_id) {
        if (!gold_ids.count(id)) throw Error(Errc::shape_mismatch, "prediction id " + id + " has no gold example");
    }
    return f1_from_counts(total.tp, total.fp, total.fn);
}

ordered_json f1_result_to_json(const F1Result& r) {
    return ordered_json{{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
                        {"tp", r.tp},               {"fp", r.fp},         {"fn", r.fn}};
}

// ---------------------------------------------------------------------------
// KBQA

KbqaRecord kbqa_record_from_json(const json& j) {
    KbqaRecord r;
    try {
        r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        r.question = j.at("question").get<std::string>();
        r.topic_entity = j.at("topic_entity").get<std::string>();
        r.answers = j.at("answers").get<std::vector<std::string>>();
        const auto& triples = j.at("triples");
        if (!triples.is_array()) throw Error(Errc::schema_violation, "triples must be a list");
        for (const auto& t : triples) {
            if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
                r.load_error = "malformed triple " + t.dump();
                continue;
            }
            r.triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw Error(Errc::schema_violation, std::string("KBQA record: ") + e.what());
    }
    return r;
}

std::vector<KbqaRecord> load_kbqa_dataset(const std::string& path) {
    std::vector<KbqaRecord> out;
    std::size_t lineno = 0;
    for (const auto& line : text::split_lines(text::read_file(path))) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(kbqa_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        } catch (const Error& e) {
            throw Error(Errc::corrupt_record, path + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
    }
    return out;
}

namespace {

const std::set<std::string> kPythonKeywords{
    "and",  "as",     "assert", "async", "await",    "break", "class", "continue", "def",    "del",   "elif",
    "else", "except", "false",  "finally", "for",    "from",  "global", "if",      "import", "in",    "is",
    "lambda", "none", "nonlocal", "not", "or",       "pass",  "raise", "return",   "true",   "try",   "while",
    "with", "yield",  "name",   "self"};

std::string predicate_attribute(const std::string& predicate) {
    std::string a = text::to_attribute_identifier(predicate);
    if (kPythonKeywords.count(a)) a += "_";
    return a;
}

} // namespace

std::unique_ptr<KnowledgeStore> kbqa_store(const KbqaRecord& rec) {
    if (!rec.load_error.empty()) throw Error(Errc::subgraph_load_failure, rec.id + ": " + rec.load_error);
    if (rec.triples.empty()) throw Error(Errc::subgraph_load_failure, rec.id + ": no triples");
    const std::string ns(kKbqaNamespace);
    const std::string concept_key = ns + "." + std::string(kKbqaConcept);

    Concept c;
    c.name = std::string(kKbqaConcept);
    c.ns = ns;
    c.description = "A knowledge-graph node.";
    std::set<std::string> attrs;
    for (const auto& t : rec.triples) {
        const auto a = predicate_attribute(t[1]);
        if (attrs.insert(a).second) {
            c.attributes.push_back({a, ValueType::parse("List[" + std::string(kKbqaConcept) + "]"), t[1]});
        }
    }
    OntologyGraph graph;
    try {
        graph.add(c);
    } catch (const Error& e) {
        throw Error(Errc::subgraph_load_failure, rec.id + ": " + e.what());
    }

    std::map<std::string, KnowledgeObject> objects;
    auto node = [&](const std::string& name) -> KnowledgeObject& {
        const auto id = object_id(graph, concept_key, name);
        auto [it, fresh] = objects.try_emplace(id);
        if (fresh) {
            it->second.id = id;
            it->second.concept_name = concept_key;
            it->second.display_name = name;
            it->second.provenance = {{"kbqa:" + rec.id, 1}};
        }
        return it->second;
    };
    for (const auto& t : rec.triples) {
        if (text::trim(t[0]).empty() || text::trim(t[2]).empty()) {
            throw Error(Errc::subgraph_load_failure, rec.id + ": empty entity in triple");
        }
        const auto target = node(t[2]).id;
        auto& values = node(t[0]).slots[predicate_attribute(t[1])];
        if (std::none_of(values.begin(), values.end(), [&](const SlotValue& v) { return v.text == target; })) {
            values.push_back(SlotValue::of_ref(target));
        }
    }
    if (!objects.count(object_id(graph, concept_key, rec.topic_entity))) {
        throw Error(Errc::subgraph_load_failure, rec.id + ": topic entity '" + rec.topic_entity + "' not in triples");
    }
    auto store = std::make_unique<KnowledgeStore>(graph, [] { return Timestamp{1}; });
    try {
        for (auto& [id, o] : objects) store->ingest(std::move(o));
    } catch (const Error& e) {
        throw Error(Errc::subgraph_load_failure, rec.id + ": " + e.what());
    }
    return store;
}

std::vector<std::string> parse_answer_lines(std::string_view output) {
    const auto lines = text::split_lines(output);
    std::size_t start = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]) == "ANSWERS:") start = i + 1;
    }
    std::vector<std::string> out;
    for (std::size_t i = start; i < lines.size(); ++i) {
        auto a = text::trim(lines[i]);
        if (!a.empty()) out.push_back(std::move(a));
    }
    return out;
}

KbqaEvalResult eval_kbqa(const std::vector<KbqaRecord>& data, LlmGateway& llm, const KbqaConfig& cfg) {
    if (data.empty()) throw Error(Errc::precondition, "KBQA dataset is empty");
    KbqaEvalResult r;
    std::size_t hits = 0;
    std::size_t n = 0;
    for (const auto& rec : data) {
        ++n;
        KbqaQuestionResult q;
        q.id = rec.id;
        q.gold = rec.answers;
        try {
            auto store = kbqa_store(rec);
            ComputationConfig cc = cfg.computation;
            cc.fixed_concepts = {std::string(kKbqaNamespace) + "." + std::string(kKbqaConcept)};
            cc.seed_ids = {object_id(store->ontology(), cc.fixed_concepts[0], rec.topic_entity)};
            cc.hops = cfg.hops;
            cc.codegen_note = cc.codegen_note.empty() ? std::string(templates::kAnswerSentinel)
                                                      : cc.codegen_note + " " + std::string(templates::kAnswerSentinel);
            if (!cc.workdir.empty()) {
                cc.workdir = (fs::path(cc.workdir) / ("q" + std::to_string(n) + "-" + text::to_attribute_identifier(rec.id))).string();
            }
            const auto trace = run_computation_cycle(rec.question, store->ontology(), *store, llm, cc);
            if (trace.final_status == CycleStatus::passed) {
                q.predicted = parse_answer_lines(trace.output());
            } else {
                q.error = trace.reason.empty() ? std::string(cycle_status_name(trace.final_status)) : trace.reason;
            }
        } catch (const Error& e) {
            q.error = e.what();
        }
        std::set<std::string> printed;
        for (const auto& p : q.predicted) printed.insert(text::normalize_answer(p));
        q.hit = std::any_of(q.gold.begin(), q.gold.end(),
                            [&](const std::string& g) { return printed.count(text::normalize_answer(g)) > 0; });
        if (q.hit) ++hits;
        r.per_question.push_back(std::move(q));
    }
    r.hits_at_1 = static_cast<double>(hits) / static_cast<double>(data.size());
    return r;
}

ordered_json kbqa_result_to_json(const KbqaEvalResult& r) {
    ordered_json j;
    j["hits_at_1"] = r.hits_at_1;
    j["per_question"] = ordered_json::array();
    for (const auto& q : r.per_question) {
        ordered_json e{{"id", q.id}, {"predicted", q.predicted}, {"gold", q.gold}, {"hit", q.hit}};
        if (!q.error.empty()) e["error"] = q.error;
        j["per_question"].push_back(std::move(e));
    }
    return j;
}

// ---------------------------------------------------------------------------
// Report judging

std::string render_judge_prompt(const std::string& report, const std::string& rubric) {
    std::string p = text::trim(rubric);
    p += "\n\nScore the report on each aspect from 1 to 10. Answer with one line per aspect in the form "
         "`aspect: value` for " +
         text::join(kReportAspects, ", ") + ".\n\nReport:\n" + report;
    return p;
}

std::map<std::string, double> parse_judge_scores(std::string_view response) {
    std::map<std::string, double> out;
    for (const auto& raw : text::split_lines(response)) {
        const auto colon = raw.find(':');
        if (colon == std::string::npos) continue;
        std::string key;
        for (char c : raw.substr(0, colon)) {
            if (std::isalpha(static_cast<unsigned char>(c))) key.push_back(static_cast<char>(std::tolower(c)));
        }
        if (std::find(kReportAspects.begin(), kReportAspects.end(), key) == kReportAspects.end()) continue;
        std::string value = text::trim(raw.substr(colon + 1));
        value.erase(std::remove(value.begin(), value.end(), '*'), value.end());
        const char* begin = value.c_str();
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin || !std::isfinite(v) || v < kJudgeMin || v > kJudgeMax) continue;
        out.emplace(key, v);
    }
    return out;
}

ReportScore judge_report(const std::string& report, const std::string& rubric, const std::vector<LlmGateway*>& judges) {
    if (judges.empty()) throw Error(Errc::precondition, "judge_report needs at least one judge");
    const std::string prompt = render_judge_prompt(report, rubric);
    std::map<std::string, std::vector<double>> values;
    ReportScore s;
    for (std::size_t i = 0; i < judges.size(); ++i) {
        const auto scores = parse_judge_scores(judges[i]->ask(prompt));
        for (const auto& aspect : kReportAspects) {
            auto it = scores.find(aspect);
            if (it == scores.end()) {
                s.issues.push_back({Errc::unparseable_score, "judge " + std::to_string(i + 1) + ": no " + aspect + " score"});
            } else {
                values[aspect].push_back(it->second);
            }
        }
    }
    for (const auto& aspect : kReportAspects) {
        const auto& v = values[aspect];
        if (v.empty()) {
            s.aspects[aspect] = std::nullopt;
        } else {
            double sum = 0;
            for (double x : v) sum += x;
            s.aspects[aspect] = sum / static_cast<double>(v.size());
        }
    }
    return s;
}

ordered_json report_score_to_json(const ReportScore& s) {
    ordered_json j;
    for (const auto& aspect : kReportAspects) {
        const auto& v = s.aspects.at(aspect);
        j[aspect] = v ? ordered_json(*v) : ordered_json(nullptr);
    }
    j["issues"] = ordered_json::array();
    for (const auto& d : s.issues) j["issues"].push_back(d.message);
    return j;
}

} // namespace kdr
