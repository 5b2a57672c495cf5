// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdr/error.hpp"
#include "kdr/knowledge_store.hpp"
#include "kdr/llm.hpp"
#include "kdr/ontology.hpp"

namespace kdr {

enum class ExtractionMode { closed, open };

struct ExtractionRequest {
    std::string text;
    std::string ns;
    ExtractionMode mode = ExtractionMode::closed;
    std::vector<std::string> allowed_types; ///< closed mode only
    std::string source_id;                  ///< provenance source of produced objects
    Timestamp timestamp = 0;                ///< 0 lets the store stamp ingestion time
};

/// Closed mode needs allowed types, open mode forbids them.
void validate_request(const ExtractionRequest& req);

std::string render_schema_recall_prompt(const std::string& ns, const std::string& type_name);
std::string render_importing_prompt(const ExtractionRequest& req);
/// Throws EmptyImport when `imported` is empty.
std::string render_instantiation_prompt(const std::string& ns, const std::vector<std::string>& imported,
                                        const std::string& text);

/// Reads `Import A` / `Import A, B` / `From NS Import A` lines, case-insensitive
/// on the keywords. Returns qualified names in first-appearance order; names
/// the ontology does not know are dropped and recorded. Throws NoImportsFound.
std::vector<std::string> parse_import_lines(std::string_view response, const OntologyGraph& graph,
                                            const std::string& ns, Diagnostics* dropped = nullptr);

// ---------------------------------------------------------------------------
// Instantiation code

struct ParsedValue {
    ValueKind kind = ValueKind::text;
    std::string text;
    double number = 0;
    std::size_t ref = 0; ///< index into the parse output when kind == ref

    friend bool operator==(const ParsedValue&, const ParsedValue&) = default;
};

struct ParsedInstantiation {
    std::string concept_name; ///< qualified
    std::string display_name;
    std::map<std::string, std::vector<ParsedValue>> args; ///< identity attribute excluded
    std::pair<std::size_t, std::size_t> source_span;     ///< [begin, end) byte range in the code
    bool stub = false; ///< created from a bare string in a ref-typed attribute
};

enum class IssueKind { unknown_class, unknown_keyword, malformed, nesting_too_deep, missing_name, type_mismatch };

std::string_view issue_kind_name(IssueKind k) noexcept;

struct ParseIssue {
    IssueKind kind;
    std::string message;
    std::size_t position = 0;
};

struct ParseResult {
    /// Flat output; nested and stub objects precede the objects referring to them.
    std::vector<ParsedInstantiation> objects;
    std::vector<ParseIssue> issues;
};

/// Accepts bare constructor calls, `name = Call(...)` bindings and
/// `name = [Call(...), name, ...]` lists, optionally inside a fenced block.
/// Tolerant mode skips offending calls and records issues; strict mode throws
/// ParseFailure at the first one. Throws EmptyOutput when no statement parses.
ParseResult parse_instantiation_code(std::string_view response, const OntologyGraph& graph, const std::string& ns,
                                     bool tolerant = true);

std::vector<KnowledgeObject> to_knowledge_objects(const std::vector<ParsedInstantiation>& parsed,
                                                  const OntologyGraph& graph, const std::string& source,
                                                  Timestamp timestamp = 0);

struct ExtractionResult {
    std::vector<KnowledgeObject> objects;
    std::vector<std::string> imported; ///< qualified names used for instantiation
    std::vector<ParseIssue> issues;
    Diagnostics diagnostics;
    std::optional<std::string> reason; ///< set when extraction stopped early
};

/// Two-step flow: recall types through the import clause, then instantiate.
ExtractionResult extract(const ExtractionRequest& req, const OntologyGraph& graph, LlmGateway& llm);

// ---------------------------------------------------------------------------
// Annotated corpora and training data

struct Annotation {
    std::string type;
    nlohmann::json slots; ///< attribute -> string | number | list
};

struct IeExample {
    std::string id;
    std::string text;
    std::vector<Annotation> annotations;
};

std::vector<IeExample> load_ie_dataset(const std::string& path);
IeExample ie_example_from_json(const nlohmann::json& j);

/// Gold objects for one annotation: stubs for ref-typed slot strings first,
/// then the annotated object. Throws UnknownGoldType / TypeMismatch.
std::vector<KnowledgeObject> annotation_to_objects(const Annotation& ann, const OntologyGraph& graph,
                                                   const std::string& ns, const std::string& source = {});

enum class TrainingTask { understanding, importing_closed, importing_open, instantiation };

std::string_view training_task_name(TrainingTask t) noexcept;
TrainingTask parse_training_task(std::string_view s);

struct TrainingSample {
    TrainingTask task;
    std::string prompt;
    std::string target;

    friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

/// Understanding samples are emitted once per distinct gold type; the other
/// tasks once per annotated sentence.
std::vector<TrainingSample> generate_training_samples(const std::vector<IeExample>& dataset,
                                                      const OntologyGraph& graph, const std::string& ns,
                                                      const std::set<TrainingTask>& tasks);

std::string training_samples_to_jsonl(const std::vector<TrainingSample>& samples);

} // namespace kdr
