// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdr/alignment.hpp"
#include "kdr/error.hpp"
#include "kdr/extraction.hpp"
#include "kdr/llm.hpp"
#include "kdr/ontology.hpp"
#include "kdr/reasoning.hpp"

namespace kdr {

// ---------------------------------------------------------------------------
// Taxonomy expansion

struct TaxonomyLeaf {
    Concept concept_def;     ///< parent left empty
    std::string gold_parent; ///< qualified name or root
};

struct TaxonomyDataset {
    OntologyGraph train;
    std::vector<TaxonomyLeaf> test;
};

/// `{"namespace": ns, "train": [{name, parent?, kind?, description?}],
///   "test": [{name, gold_parent, kind?, description?}]}`. Throws SchemaViolation.
TaxonomyDataset taxonomy_dataset_from_json(const nlohmann::json& j);
TaxonomyDataset load_taxonomy_dataset(const std::string& path);

/// Predicts the qualified parent of `leaf` within `graph`.
using Aligner = std::function<std::string(const Concept& leaf, const OntologyGraph& graph)>;

/// Aligner backed by align_concept on the given model.
Aligner llm_aligner(LlmGateway& llm, std::size_t k = kDefaultCandidateCount);

struct TaxonomyQueryResult {
    std::string query;
    std::string predicted;
    std::string gold;
    double wup = 0;
};

struct TaxonomyEvalResult {
    double accuracy = 0;
    double mean_wu_palmer = 0;
    std::vector<TaxonomyQueryResult> per_query;
};

/// Each leaf is aligned against the training graph alone. Throws
/// Precondition (no test leaves), GoldParentMissing.
TaxonomyEvalResult eval_taxonomy(const TaxonomyDataset& data, const Aligner& aligner);

nlohmann::ordered_json taxonomy_result_to_json(const TaxonomyEvalResult& r);

// ---------------------------------------------------------------------------
// Information extraction

enum class IeTask { ner, re, ed, eae };

std::string_view ie_task_name(IeTask t) noexcept;
IeTask parse_ie_task(std::string_view s);
/// 2 for ner/ed, 3 for re/eae.
std::size_t ie_tuple_arity(IeTask t) noexcept;

using IeTuple = std::vector<std::string>;

struct F1Result {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Micro P/R/F1 from counts; 0 for empty denominators.
F1Result f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

/// Multiset exact match after case-fold and whitespace collapse. Tuple shapes:
/// ner (type, mention), ed (type, trigger), re (head, relation, tail),
/// eae (event type, role, argument). Throws ShapeMismatch.
F1Result eval_ie_f1(const std::vector<IeTuple>& pred, const std::vector<IeTuple>& gold, IeTask task);

/// Tuples of one annotated example: ner `{type, slots.name}`, ed
/// `{type, slots.trigger}`, re `{slots.head, type, slots.tail}`, eae one tuple
/// per non-trigger slot value. Throws ShapeMismatch.
std::vector<IeTuple> ie_tuples(const IeExample& ex, IeTask task);

/// Pairs predictions with gold by example id (missing predictions count as
/// empty) and micro-averages. Throws ShapeMismatch for prediction ids absent
/// from gold.
F1Result eval_ie_dataset(const std::vector<IeExample>& pred, const std::vector<IeExample>& gold, IeTask task);

nlohmann::ordered_json f1_result_to_json(const F1Result& r);

// ---------------------------------------------------------------------------
// KBQA

struct KbqaRecord {
    std::string id;
    std::string question;
    std::string topic_entity;
    std::vector<std::array<std::string, 3>> triples;
    std::vector<std::string> answers;
    std::string load_error; ///< malformed triples, reported when the question is evaluated
};

/// JSON-lines of `{id, question, topic_entity, triples, answers}`; shape
/// problems inside triples are left for the per-question load. Throws CorruptRecord.
std::vector<KbqaRecord> load_kbqa_dataset(const std::string& path);
KbqaRecord kbqa_record_from_json(const nlohmann::json& j);

inline constexpr std::string_view kKbqaNamespace = "KB";
inline constexpr std::string_view kKbqaConcept = "KBEntity";

/// Single-concept ontology whose attributes are the sanitized predicates
/// (each `List[KBEntity]`), and one object per distinct subject/object.
/// Throws SubgraphLoadFailure.
std::unique_ptr<KnowledgeStore> kbqa_store(const KbqaRecord& rec);

/// Lines after the last `ANSWERS:` line.
std::vector<std::string> parse_answer_lines(std::string_view output);

struct KbqaQuestionResult {
    std::string id;
    std::vector<std::string> predicted;
    std::vector<std::string> gold;
    bool hit = false;
    std::string error; ///< subgraph load failure or cycle failure reason
};

struct KbqaEvalResult {
    double hits_at_1 = 0;
    std::vector<KbqaQuestionResult> per_question;
};

struct KbqaConfig {
    ComputationConfig computation; ///< workdir is the base for per-question directories
    int hops = 3;
};

/// Per question: transient store, computation cycle seeded with the given topic
/// entity, answers read after the sentinel; hit when any normalized gold answer
/// is printed.
KbqaEvalResult eval_kbqa(const std::vector<KbqaRecord>& data, LlmGateway& llm, const KbqaConfig& cfg);

nlohmann::ordered_json kbqa_result_to_json(const KbqaEvalResult& r);

// ---------------------------------------------------------------------------
// Report judging

inline const std::vector<std::string> kReportAspects{"completeness", "thoroughness", "factuality", "coherence",
                                                     "insight"};

inline constexpr double kJudgeMin = 1;
inline constexpr double kJudgeMax = 10;

struct ReportScore {
    /// Every aspect is present; empty when no judge produced a usable value.
    std::map<std::string, std::optional<double>> aspects;
    Diagnostics issues;
};

std::string render_judge_prompt(const std::string& report, const std::string& rubric);

/// `aspect: value` lines; values outside the judge scale are dropped.
std::map<std::string, double> parse_judge_scores(std::string_view response);

/// Averages each aspect over the judges that scored it. Throws Precondition
/// without judges.
ReportScore judge_report(const std::string& report, const std::string& rubric,
                         const std::vector<LlmGateway*>& judges);

nlohmann::ordered_json report_score_to_json(const ReportScore& s);

} // namespace kdr
